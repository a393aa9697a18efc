//! Metrics, Christoffel symbols, curvature towers and scalar invariants for
//! the plane wave families, plus an independent finite-difference oracle.
//!
//! All three metric variants share the same chart structure on R^{2p}:
//! coordinates (x_1..x_p, xt_1..xt_p), a symmetric x-block Xi(x) and unit
//! off-diagonal pairings. Curvature is computed exactly from symbolic
//! x-functions; the oracle recomputes it from metric values alone.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::smoothfn::{FnError, SmoothFunction};

pub const DEFAULT_K_MAX: usize = 8;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point outside the metric domain: {0}")]
    Domain(String),
    #[error("derivative order {k} exceeds the configured maximum {max}")]
    OrderTooLarge { k: usize, max: usize },
    #[error("metric is singular at the requested point")]
    SingularMetric,
    #[error(transparent)]
    Fn(#[from] FnError),
}

/// A chart point (x_1..x_p, xt_1..xt_p).
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub x: Vec<f64>,
    pub xt: Vec<f64>,
}

impl ChartPoint {
    pub fn new(x: Vec<f64>, xt: Vec<f64>) -> Self {
        assert_eq!(x.len(), xt.len(), "x and xt blocks must match");
        assert!(x.len() >= 2);
        ChartPoint { x, xt }
    }

    pub fn origin(p: usize) -> Self {
        ChartPoint::new(vec![0.0; p], vec![0.0; p])
    }

    /// (x, y, xt, yt) when p = 2.
    pub fn xy(x: f64, y: f64, xt: f64, yt: f64) -> Self {
        ChartPoint::new(vec![x, y], vec![xt, yt])
    }

    pub fn p(&self) -> usize {
        self.x.len()
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.x.clone();
        c.extend_from_slice(&self.xt);
        c
    }

    pub fn from_coords(c: &[f64]) -> Self {
        let p = c.len() / 2;
        ChartPoint::new(c[..p].to_vec(), c[p..].to_vec())
    }
}

// ---------------------------------------------------------------------------
// Symbolic functions of the x-coordinates
// ---------------------------------------------------------------------------

/// One separable term: coeff * prod_i factors[i](x_i).
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableTerm {
    pub coeff: f64,
    pub factors: Vec<SmoothFunction>,
}

/// A function of the x-coordinates, stored as a sum of separable terms.
/// Partial derivatives stay in the class; products may leave it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordFn {
    pub p: usize,
    pub terms: Vec<SeparableTerm>,
}

impl CoordFn {
    pub fn zero(p: usize) -> Self {
        CoordFn { p, terms: Vec::new() }
    }

    pub fn constant(p: usize, c: f64) -> Self {
        if c == 0.0 {
            return Self::zero(p);
        }
        CoordFn {
            p,
            terms: vec![SeparableTerm {
                coeff: c,
                factors: vec![SmoothFunction::constant(1.0); p],
            }],
        }
    }

    /// f applied to the single coordinate x_axis.
    pub fn from_profile(p: usize, axis: usize, f: SmoothFunction) -> Self {
        if f.is_zero() {
            return Self::zero(p);
        }
        let mut factors = vec![SmoothFunction::constant(1.0); p];
        factors[axis] = f;
        CoordFn {
            p,
            terms: vec![SeparableTerm { coeff: 1.0, factors }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &CoordFn) -> CoordFn {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        CoordFn { p: self.p, terms }.compact()
    }

    pub fn scale(&self, k: f64) -> CoordFn {
        if k == 0.0 {
            return Self::zero(self.p);
        }
        CoordFn {
            p: self.p,
            terms: self
                .terms
                .iter()
                .map(|t| SeparableTerm {
                    coeff: k * t.coeff,
                    factors: t.factors.clone(),
                })
                .collect(),
        }
    }

    fn compact(mut self) -> CoordFn {
        self.terms.retain(|t| {
            t.coeff != 0.0 && !t.factors.iter().any(|f| f.is_zero())
        });
        self
    }

    pub fn partial(&self, axis: usize) -> CoordFn {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut factors = t.factors.clone();
                factors[axis] = factors[axis].derivative(1);
                SeparableTerm {
                    coeff: t.coeff,
                    factors,
                }
            })
            .collect();
        CoordFn { p: self.p, terms }.compact()
    }

    /// Repeated partials along a multi-index.
    pub fn partials(&self, axes: &[usize]) -> CoordFn {
        axes.iter().fold(self.clone(), |f, &a| f.partial(a))
    }

    pub fn try_mul(&self, other: &CoordFn) -> Result<CoordFn, FnError> {
        let mut terms = Vec::new();
        for s in &self.terms {
            for t in &other.terms {
                let mut factors = Vec::with_capacity(self.p);
                for i in 0..self.p {
                    factors.push(s.factors[i].try_mul(&t.factors[i])?);
                }
                terms.push(SeparableTerm {
                    coeff: s.coeff * t.coeff,
                    factors,
                });
            }
        }
        Ok(CoordFn { p: self.p, terms }.compact())
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.terms
            .iter()
            .all(|t| t.factors.iter().zip(x).all(|(f, &xi)| f.contains(xi)))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, FnError> {
        let mut acc = 0.0;
        for t in &self.terms {
            let mut prod = t.coeff;
            for (f, &xi) in t.factors.iter().zip(x) {
                prod *= f.eval(xi)?;
            }
            acc += prod;
        }
        Ok(acc)
    }
}

/// Symmetric p x p field of x-functions (the metric's x-block).
#[derive(Debug, Clone, PartialEq)]
pub struct XiMatrix {
    pub p: usize,
    entries: Vec<CoordFn>, // row-major p*p, kept symmetric
}

impl XiMatrix {
    pub fn zero(p: usize) -> Self {
        XiMatrix {
            p,
            entries: vec![CoordFn::zero(p); p * p],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, f: CoordFn) {
        self.entries[i * self.p + j] = f.clone();
        self.entries[j * self.p + i] = f;
    }

    pub fn get(&self, i: usize, j: usize) -> &CoordFn {
        &self.entries[i * self.p + j]
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, FnError> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for i in 0..self.p {
            for j in 0..self.p {
                m[(i, j)] = self.get(i, j).eval(x)?;
            }
        }
        Ok(m)
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.entries.iter().all(|e| e.in_domain(x))
    }
}

// ---------------------------------------------------------------------------
// Metric specifications
// ---------------------------------------------------------------------------

/// Chart-level metric description for the plane wave families.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    /// Neutral metric on R^4 with g(dx,dx) = -2*sign*f(y) and unit pairings.
    Profile { f: SmoothFunction, sign: f64 },
    /// General plane wave metric with x-block Xi on R^{2p}.
    PlaneWave { xi: XiMatrix },
    /// Graph hypersurface over R^p; pullback metric has Xi_ij = d_i psi d_j psi.
    Hypersurface { psi: CoordFn },
}

impl MetricSpec {
    pub fn profile(f: SmoothFunction) -> Self {
        MetricSpec::Profile { f, sign: 1.0 }
    }

    pub fn profile_signed(f: SmoothFunction, sign: f64) -> Self {
        assert!(sign == 1.0 || sign == -1.0);
        MetricSpec::Profile { f, sign }
    }

    pub fn plane_wave(xi: XiMatrix) -> Self {
        MetricSpec::PlaneWave { xi }
    }

    pub fn hypersurface(psi: CoordFn) -> Self {
        MetricSpec::Hypersurface { psi }
    }

    pub fn p(&self) -> usize {
        match self {
            MetricSpec::Profile { .. } => 2,
            MetricSpec::PlaneWave { xi } => xi.p,
            MetricSpec::Hypersurface { psi } => psi.p,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.p()
    }

    /// The profile with the sign flag folded in (Profile only).
    pub fn effective_profile(&self) -> Option<SmoothFunction> {
        match self {
            MetricSpec::Profile { f, sign } => Some(f.scale(*sign)),
            _ => None,
        }
    }

    /// Reduce to the common plane wave form.
    pub fn xi(&self) -> Result<XiMatrix, GeometryError> {
        match self {
            MetricSpec::Profile { f, sign } => {
                let mut xi = XiMatrix::zero(2);
                xi.set(0, 0, CoordFn::from_profile(2, 1, f.scale(-2.0 * sign)));
                Ok(xi)
            }
            MetricSpec::PlaneWave { xi } => Ok(xi.clone()),
            MetricSpec::Hypersurface { psi } => {
                let grads: Vec<CoordFn> = (0..psi.p).map(|i| psi.partial(i)).collect();
                let mut xi = XiMatrix::zero(psi.p);
                for i in 0..psi.p {
                    for j in i..psi.p {
                        xi.set(i, j, grads[i].try_mul(&grads[j])?);
                    }
                }
                Ok(xi)
            }
        }
    }

    pub fn in_domain(&self, point: &ChartPoint) -> Result<(), GeometryError> {
        let ok = match self {
            MetricSpec::Profile { f, .. } => f.contains(point.x[1]),
            MetricSpec::PlaneWave { xi } => xi.in_domain(&point.x),
            MetricSpec::Hypersurface { psi } => psi.in_domain(&point.x),
        };
        if ok {
            Ok(())
        } else {
            Err(GeometryError::Domain(format!("{:?}", point)))
        }
    }
}

// ---------------------------------------------------------------------------
// Metric values and frames
// ---------------------------------------------------------------------------

/// Symmetric 2p x 2p metric matrix at a point.
pub fn metric_at(spec: &MetricSpec, point: &ChartPoint) -> Result<DMatrix<f64>, GeometryError> {
    spec.in_domain(point)?;
    let p = spec.p();
    let xi = spec.xi()?.eval(&point.x)?;
    let mut g = DMatrix::zeros(2 * p, 2 * p);
    for i in 0..p {
        for j in 0..p {
            g[(i, j)] = xi[(i, j)];
        }
        g[(i, p + i)] = 1.0;
        g[(p + i, i)] = 1.0;
    }
    Ok(g)
}

/// Closed-form inverse: [[Xi, I],[I, 0]]^-1 = [[0, I],[I, -Xi]].
pub fn inverse_metric_at(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<DMatrix<f64>, GeometryError> {
    spec.in_domain(point)?;
    let p = spec.p();
    let xi = spec.xi()?.eval(&point.x)?;
    let mut ginv = DMatrix::zeros(2 * p, 2 * p);
    for i in 0..p {
        ginv[(i, p + i)] = 1.0;
        ginv[(p + i, i)] = 1.0;
        for j in 0..p {
            ginv[(p + i, p + j)] = -xi[(i, j)];
        }
    }
    Ok(ginv)
}

/// Lowered Christoffel field Gamma_ijk = (d_i Xi_jk + d_j Xi_ik - d_k Xi_ij)/2
/// as symbolic x-functions; indices all in the x-block.
pub fn christoffel_field(spec: &MetricSpec) -> Result<Vec<CoordFn>, GeometryError> {
    let xi = spec.xi()?;
    let p = xi.p;
    let mut out = Vec::with_capacity(p * p * p);
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                let a = xi.get(j, k).partial(i);
                let b = xi.get(i, k).partial(j);
                let c = xi.get(i, j).partial(k);
                out.push(a.add(&b).add(&c.scale(-1.0)).scale(0.5));
            }
        }
    }
    Ok(out)
}

/// Sparse Christoffel table at a point. The only nonzero covariant symbols
/// are Gamma_ijk with x-block indices; the raised output lands on the
/// xt-directions: nabla_{d_i} d_j = sum_k Gamma_ijk d^xt_k.
pub fn christoffel(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<Vec<f64>, GeometryError> {
    spec.in_domain(point)?;
    let field = christoffel_field(spec)?;
    field
        .iter()
        .map(|f| f.eval(&point.x).map_err(GeometryError::from))
        .collect()
}

pub fn gamma_index(p: usize, i: usize, j: usize, k: usize) -> usize {
    (i * p + j) * p + k
}

/// Frame {X_i, Xt_i} with exactly hyperbolic pairings: X_i = d_i - Xi_ij/2 d^xt_j.
pub fn hyperbolic_frame(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<Vec<DVector<f64>>, GeometryError> {
    spec.in_domain(point)?;
    let p = spec.p();
    let xi = spec.xi()?.eval(&point.x)?;
    let mut frame = Vec::with_capacity(2 * p);
    for i in 0..p {
        let mut v = DVector::zeros(2 * p);
        v[i] = 1.0;
        for j in 0..p {
            v[p + j] = -0.5 * xi[(i, j)];
        }
        frame.push(v);
    }
    for i in 0..p {
        let mut v = DVector::zeros(2 * p);
        v[p + i] = 1.0;
        frame.push(v);
    }
    Ok(frame)
}

// ---------------------------------------------------------------------------
// Curvature tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CurvatureKey {
    pub r: [u8; 4],
    pub d: Vec<u8>,
}

/// Sparse store of nabla^k R components in the coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureTable {
    pub order: usize,
    pub dim: usize,
    entries: BTreeMap<CurvatureKey, f64>,
}

impl CurvatureTable {
    pub fn new(order: usize, dim: usize) -> Self {
        CurvatureTable {
            order,
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, r: [usize; 4], d: &[usize], value: f64) {
        if value == 0.0 {
            return;
        }
        let key = CurvatureKey {
            r: [r[0] as u8, r[1] as u8, r[2] as u8, r[3] as u8],
            d: d.iter().map(|&x| x as u8).collect(),
        };
        self.entries.insert(key, value);
    }

    pub fn get(&self, r: [usize; 4], d: &[usize]) -> f64 {
        let key = CurvatureKey {
            r: [r[0] as u8, r[1] as u8, r[2] as u8, r[3] as u8],
            d: d.iter().map(|&x| x as u8).collect(),
        };
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CurvatureKey, &f64)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense4(&self) -> Dense4 {
        assert_eq!(self.order, 0);
        let mut d = Dense4::zeros(self.dim);
        for (k, &v) in &self.entries {
            d.set(
                k.r[0] as usize,
                k.r[1] as usize,
                k.r[2] as usize,
                k.r[3] as usize,
                v,
            );
        }
        d
    }

    pub fn to_dense5(&self) -> Dense5 {
        assert_eq!(self.order, 1);
        let mut d = Dense5::zeros(self.dim);
        for (k, &v) in &self.entries {
            d.set(
                k.r[0] as usize,
                k.r[1] as usize,
                k.r[2] as usize,
                k.r[3] as usize,
                k.d[0] as usize,
                v,
            );
        }
        d
    }
}

fn frame_name(p: usize, i: usize) -> String {
    if p == 2 {
        ["dx", "dy", "dxt", "dyt"][i].to_string()
    } else if i < p {
        format!("dx{}", i + 1)
    } else {
        format!("dxt{}", i - p + 1)
    }
}

impl fmt::Display for CurvatureTable {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.dim / 2;
        for (k, v) in &self.entries {
            let names: Vec<String> = k
                .r
                .iter()
                .map(|&i| frame_name(p, i as usize))
                .collect();
            let ds: Vec<String> = k
                .d
                .iter()
                .map(|&i| frame_name(p, i as usize))
                .collect();
            if ds.is_empty() {
                writeln!(out, "R({}) = {}", names.join(","), v)?;
            } else {
                writeln!(out, "R({};{}) = {}", names.join(","), ds.join(","), v)?;
            }
        }
        Ok(())
    }
}

/// Exact nabla^k R: component (i1 i2 i3 i4; j1..jk) equals the j-partials of
/// d_{i1} Gamma_{i2 i3 i4} - d_{i2} Gamma_{i1 i3 i4}; entries with any index
/// in the xt-block vanish and are never stored.
pub fn curvature(
    spec: &MetricSpec,
    point: &ChartPoint,
    k: usize,
) -> Result<CurvatureTable, GeometryError> {
    curvature_with_max(spec, point, k, DEFAULT_K_MAX)
}

pub fn curvature_with_max(
    spec: &MetricSpec,
    point: &ChartPoint,
    k: usize,
    k_max: usize,
) -> Result<CurvatureTable, GeometryError> {
    if k > k_max {
        return Err(GeometryError::OrderTooLarge { k, max: k_max });
    }
    spec.in_domain(point)?;
    let p = spec.p();
    let gamma = christoffel_field(spec)?;
    let mut table = CurvatureTable::new(k, 2 * p);

    // base tensor B_{i1 i2 i3 i4} as a symbolic x-function
    let mut multi = vec![0usize; k];
    for i1 in 0..p {
        for i2 in 0..p {
            if i1 == i2 {
                continue;
            }
            for i3 in 0..p {
                for i4 in 0..p {
                    let base = gamma[gamma_index(p, i2, i3, i4)]
                        .partial(i1)
                        .add(&gamma[gamma_index(p, i1, i3, i4)].partial(i2).scale(-1.0));
                    // iterate all k-tuples of derivative directions
                    multi.iter_mut().for_each(|m| *m = 0);
                    loop {
                        let val = base.partials(&multi).eval(&point.x)?;
                        table.set([i1, i2, i3, i4], &multi, val);
                        // increment the multi-index odometer
                        let mut pos = 0;
                        loop {
                            if pos == k {
                                break;
                            }
                            multi[pos] += 1;
                            if multi[pos] < p {
                                break;
                            }
                            multi[pos] = 0;
                            pos += 1;
                        }
                        if pos == k {
                            break;
                        }
                    }
                    if k == 0 {
                        // odometer loop above runs exactly once for k = 0
                    }
                }
            }
        }
    }
    Ok(table)
}

/// Curvature of a graph hypersurface from its second fundamental form:
/// component (i1 i2 i3 i4; j...) = j-partials of (L_{i1 i4}L_{i2 i3} - L_{i1 i3}L_{i2 i4}).
pub fn curvature_from_shape(
    psi: &CoordFn,
    point: &ChartPoint,
    k: usize,
) -> Result<CurvatureTable, GeometryError> {
    let p = psi.p;
    let mut hess = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            hess.push(psi.partial(i).partial(j));
        }
    }
    let mut table = CurvatureTable::new(k, 2 * p);
    let mut multi = vec![0usize; k];
    for i1 in 0..p {
        for i2 in 0..p {
            if i1 == i2 {
                continue;
            }
            for i3 in 0..p {
                for i4 in 0..p {
                    let base = hess[i1 * p + i4]
                        .try_mul(&hess[i2 * p + i3])?
                        .add(&hess[i1 * p + i3].try_mul(&hess[i2 * p + i4])?.scale(-1.0));
                    multi.iter_mut().for_each(|m| *m = 0);
                    loop {
                        let val = base.partials(&multi).eval(&point.x)?;
                        table.set([i1, i2, i3, i4], &multi, val);
                        let mut pos = 0;
                        loop {
                            if pos == k {
                                break;
                            }
                            multi[pos] += 1;
                            if multi[pos] < p {
                                break;
                            }
                            multi[pos] = 0;
                            pos += 1;
                        }
                        if pos == k {
                            break;
                        }
                    }
                }
            }
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Finite-difference oracle (independent of the symbolic path)
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-4;

fn shifted(point: &ChartPoint, axis: usize, delta: f64) -> ChartPoint {
    let mut c = point.coords();
    c[axis] += delta;
    ChartPoint::from_coords(&c)
}

/// Central difference with one Richardson step of a matrix-valued map.
fn richardson_diff<F>(eval: F, h: f64) -> Result<DMatrix<f64>, GeometryError>
where
    F: Fn(f64) -> Result<DMatrix<f64>, GeometryError>,
{
    let d = |s: f64| -> Result<DMatrix<f64>, GeometryError> {
        Ok((eval(s)? - eval(-s)?) / (2.0 * s))
    };
    let d1 = d(h)?;
    let d2 = d(h / 2.0)?;
    Ok((d2 * 4.0 - d1) / 3.0)
}

/// Raised Christoffel symbols Gamma^l_{ab} at a point, from metric values only.
fn christoffel_fd(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<Vec<f64>, GeometryError> {
    let n = spec.dim();
    let g = metric_at(spec, point)?;
    let ginv = g
        .clone()
        .try_inverse()
        .ok_or(GeometryError::SingularMetric)?;
    let mut dg = Vec::with_capacity(n);
    for a in 0..n {
        dg.push(richardson_diff(
            |s| metric_at(spec, &shifted(point, a, s)),
            FD_STEP,
        )?);
    }
    let mut out = vec![0.0; n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                // lowered symbol
                let low = 0.5 * (dg[a][(b, c)] + dg[b][(a, c)] - dg[c][(a, b)]);
                for l in 0..n {
                    out[(l * n + a) * n + b] += ginv[(l, c)] * low;
                }
            }
        }
    }
    Ok(out)
}

/// Curvature (k = 0) by nested central differences of the metric alone.
pub fn curvature_fd_oracle(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<CurvatureTable, GeometryError> {
    let r = curvature_fd_dense(spec, point)?;
    let n = spec.dim();
    let mut table = CurvatureTable::new(0, n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    table.set([a, b, c, d], &[], r.get(a, b, c, d));
                }
            }
        }
    }
    Ok(table)
}

pub fn curvature_fd_dense(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<Dense4, GeometryError> {
    let n = spec.dim();
    let g = metric_at(spec, point)?;
    let gamma = christoffel_fd(spec, point)?;
    let gam = |l: usize, a: usize, b: usize| gamma[(l * n + a) * n + b];

    // dGamma[e][(l,ab)] by differencing the Christoffel map
    let mut dgamma = Vec::with_capacity(n);
    for e in 0..n {
        let eval = |s: f64| -> Result<DMatrix<f64>, GeometryError> {
            let gm = christoffel_fd(spec, &shifted(point, e, s))?;
            let mut m = DMatrix::zeros(n, n * n);
            for l in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        m[(l, a * n + b)] = gm[(l * n + a) * n + b];
                    }
                }
            }
            Ok(m)
        };
        dgamma.push(richardson_diff(eval, FD_STEP)?);
    }

    let mut r = Dense4::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for l in 0..n {
                    let mut up = dgamma[a][(l, b * n + c)] - dgamma[b][(l, a * n + c)];
                    for m in 0..n {
                        up += gam(l, a, m) * gam(m, b, c) - gam(l, b, m) * gam(m, a, c);
                    }
                    for d in 0..n {
                        let v = r.get(a, b, c, d) + up * g[(l, d)];
                        r.set(a, b, c, d, v);
                    }
                }
            }
        }
    }
    Ok(r)
}

/// Covariant derivative nabla R by finite differences (for the oracle path).
pub fn grad_curvature_fd_dense(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<Dense5, GeometryError> {
    let n = spec.dim();
    let gamma = christoffel_fd(spec, point)?;
    let gam = |l: usize, a: usize, b: usize| gamma[(l * n + a) * n + b];
    let r0 = curvature_fd_dense(spec, point)?;

    let mut dr = Vec::with_capacity(n);
    for e in 0..n {
        let eval = |s: f64| -> Result<DMatrix<f64>, GeometryError> {
            let rr = curvature_fd_dense(spec, &shifted(point, e, s))?;
            let mut m = DMatrix::zeros(n * n, n * n);
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            m[(a * n + b, c * n + d)] = rr.get(a, b, c, d);
                        }
                    }
                }
            }
            Ok(m)
        };
        dr.push(richardson_diff(eval, FD_STEP)?);
    }

    let mut out = Dense5::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    for e in 0..n {
                        let mut v = dr[e][(a * n + b, c * n + d)];
                        for m in 0..n {
                            v -= gam(m, e, a) * r0.get(m, b, c, d);
                            v -= gam(m, e, b) * r0.get(a, m, c, d);
                            v -= gam(m, e, c) * r0.get(a, b, m, d);
                            v -= gam(m, e, d) * r0.get(a, b, c, m);
                        }
                        out.set(a, b, c, d, e, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dense tensors and scalar invariant contractions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Dense4 {
    pub n: usize,
    v: Vec<f64>,
}

impl Dense4 {
    pub fn zeros(n: usize) -> Self {
        Dense4 {
            n,
            v: vec![0.0; n * n * n * n],
        }
    }
    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.v[((a * self.n + b) * self.n + c) * self.n + d]
    }
    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, val: f64) {
        self.v[((a * self.n + b) * self.n + c) * self.n + d] = val;
    }
    pub fn max_abs(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Raise one index (position `pos` in 0..4) with g_inv.
    pub fn raise(&self, pos: usize, ginv: &DMatrix<f64>) -> Dense4 {
        let n = self.n;
        let mut out = Dense4::zeros(n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let val = self.get(a, b, c, d);
                        if val == 0.0 {
                            continue;
                        }
                        let idx = [a, b, c, d];
                        for e in 0..n {
                            let w = ginv[(idx[pos], e)];
                            if w == 0.0 {
                                continue;
                            }
                            let mut j = idx;
                            j[pos] = e;
                            let cur = out.get(j[0], j[1], j[2], j[3]);
                            out.set(j[0], j[1], j[2], j[3], cur + w * val);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Dense5 {
    pub n: usize,
    v: Vec<f64>,
}

impl Dense5 {
    pub fn zeros(n: usize) -> Self {
        Dense5 {
            n,
            v: vec![0.0; n * n * n * n * n],
        }
    }
    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize, e: usize) -> f64 {
        self.v[(((a * self.n + b) * self.n + c) * self.n + d) * self.n + e]
    }
    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, e: usize, val: f64) {
        self.v[(((a * self.n + b) * self.n + c) * self.n + d) * self.n + e] = val;
    }
    pub fn max_abs(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn raise(&self, pos: usize, ginv: &DMatrix<f64>) -> Dense5 {
        let n = self.n;
        let mut out = Dense5::zeros(n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        for e in 0..n {
                            let val = self.get(a, b, c, d, e);
                            if val == 0.0 {
                                continue;
                            }
                            let idx = [a, b, c, d, e];
                            for m in 0..n {
                                let w = ginv[(idx[pos], m)];
                                if w == 0.0 {
                                    continue;
                                }
                                let mut j = idx;
                                j[pos] = m;
                                let cur = out.get(j[0], j[1], j[2], j[3], j[4]);
                                out.set(j[0], j[1], j[2], j[3], j[4], cur + w * val);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// The fixed catalog of scalar curvature invariants checked by the engine.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ScalarInvariants {
    pub scalar_curvature: f64,
    pub ricci_norm_sq: f64,
    pub riemann_norm_sq: f64,
    pub riemann_cubed: f64,
    pub grad_riemann_norm_sq: f64,
}

impl ScalarInvariants {
    pub fn values(&self) -> [f64; 5] {
        [
            self.scalar_curvature,
            self.ricci_norm_sq,
            self.riemann_norm_sq,
            self.riemann_cubed,
            self.grad_riemann_norm_sq,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Ricci tensor Ric_ab = g^{cd} R(c,a,b,d).
pub fn ricci_from(r: &Dense4, ginv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.n;
    let mut ric = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                for d in 0..n {
                    let w = ginv[(c, d)];
                    if w != 0.0 {
                        acc += w * r.get(c, a, b, d);
                    }
                }
            }
            ric[(a, b)] = acc;
        }
    }
    ric
}

pub fn scalar_invariants_from(
    r: &Dense4,
    r1: &Dense5,
    ginv: &DMatrix<f64>,
) -> ScalarInvariants {
    let n = r.n;
    let ric = ricci_from(r, ginv);

    let mut scalar_curvature = 0.0;
    for a in 0..n {
        for b in 0..n {
            scalar_curvature += ginv[(a, b)] * ric[(a, b)];
        }
    }

    let ric_up = ginv * &ric * ginv.transpose();
    let mut ricci_norm_sq = 0.0;
    for a in 0..n {
        for b in 0..n {
            ricci_norm_sq += ric[(a, b)] * ric_up[(a, b)];
        }
    }

    let r_up = r.raise(0, ginv).raise(1, ginv).raise(2, ginv).raise(3, ginv);
    let mut riemann_norm_sq = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    riemann_norm_sq += r.get(a, b, c, d) * r_up.get(a, b, c, d);
                }
            }
        }
    }

    // mixed endomorphism on 2-forms: A[(ab),(cd)] = R_{ab}{}^{cd}
    let r_mixed = r.raise(2, ginv).raise(3, ginv);
    let mut a_mat = DMatrix::zeros(n * n, n * n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    a_mat[(a * n + b, c * n + d)] = r_mixed.get(a, b, c, d);
                }
            }
        }
    }
    let a2 = &a_mat * &a_mat;
    let a3 = &a2 * &a_mat;
    let riemann_cubed = a3.trace();

    let r1_up = r1
        .raise(0, ginv)
        .raise(1, ginv)
        .raise(2, ginv)
        .raise(3, ginv)
        .raise(4, ginv);
    let mut grad_riemann_norm_sq = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    for e in 0..n {
                        grad_riemann_norm_sq +=
                            r1.get(a, b, c, d, e) * r1_up.get(a, b, c, d, e);
                    }
                }
            }
        }
    }

    ScalarInvariants {
        scalar_curvature,
        ricci_norm_sq,
        riemann_norm_sq,
        riemann_cubed,
        grad_riemann_norm_sq,
    }
}

/// Exact Ricci tensor and the five-invariant catalog.
pub fn ricci_and_scalars(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<(DMatrix<f64>, ScalarInvariants), GeometryError> {
    let r = curvature(spec, point, 0)?.to_dense4();
    let r1 = curvature(spec, point, 1)?.to_dense5();
    let ginv = inverse_metric_at(spec, point)?;
    let ric = ricci_from(&r, &ginv);
    Ok((ric, scalar_invariants_from(&r, &r1, &ginv)))
}

/// Same catalog along the finite-difference path (metric values only).
pub fn ricci_and_scalars_fd(
    spec: &MetricSpec,
    point: &ChartPoint,
) -> Result<(DMatrix<f64>, ScalarInvariants), GeometryError> {
    let r = curvature_fd_dense(spec, point)?;
    let r1 = grad_curvature_fd_dense(spec, point)?;
    let g = metric_at(spec, point)?;
    let ginv = g.try_inverse().ok_or(GeometryError::SingularMetric)?;
    let ric = ricci_from(&r, &ginv);
    Ok((ric, scalar_invariants_from(&r, &r1, &ginv)))
}

// ---------------------------------------------------------------------------
// Hypersurface embedding
// ---------------------------------------------------------------------------

/// Ambient inner product on R^{p,p+1}: <e_i, et_j> = delta_ij, <eh, eh> = 1.
pub fn ambient_inner(p: usize, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = u[2 * p] * v[2 * p];
    for i in 0..p {
        acc += u[i] * v[p + i] + u[p + i] * v[i];
    }
    acc
}

/// Graph embedding of a chart point and the unit normal at its x-slice.
pub fn embed_hypersurface(
    psi: &CoordFn,
    point: &ChartPoint,
) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
    let p = psi.p;
    let mut pos = vec![0.0; 2 * p + 1];
    pos[..p].copy_from_slice(&point.x);
    pos[p..2 * p].copy_from_slice(&point.xt);
    pos[2 * p] = psi.eval(&point.x)?;

    let mut normal = vec![0.0; 2 * p + 1];
    for i in 0..p {
        normal[p + i] = -psi.partial(i).eval(&point.x)?;
    }
    normal[2 * p] = 1.0;
    Ok((pos, normal))
}

/// Tangent vectors of the embedding at a point, as ambient coordinates.
pub fn embedding_tangents(
    psi: &CoordFn,
    point: &ChartPoint,
) -> Result<Vec<Vec<f64>>, GeometryError> {
    let p = psi.p;
    let mut out = Vec::with_capacity(2 * p);
    for i in 0..p {
        let mut t = vec![0.0; 2 * p + 1];
        t[i] = 1.0;
        t[2 * p] = psi.partial(i).eval(&point.x)?;
        out.push(t);
    }
    for i in 0..p {
        let mut t = vec![0.0; 2 * p + 1];
        t[p + i] = 1.0;
        out.push(t);
    }
    Ok(out)
}

/// Second fundamental form L_ij = d_i d_j psi at a point.
pub fn second_fundamental_form(
    psi: &CoordFn,
    x: &[f64],
) -> Result<DMatrix<f64>, GeometryError> {
    let p = psi.p;
    let mut l = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            l[(i, j)] = psi.partial(i).partial(j).eval(x)?;
        }
    }
    Ok(l)
}

// ---------------------------------------------------------------------------

/// The standard test fleet of profile functions.
pub fn fleet() -> Vec<(&'static str, SmoothFunction)> {
    vec![
        ("y^2", SmoothFunction::poly(&[0.0, 0.0, 1.0])),
        ("y^4", SmoothFunction::poly(&[0.0, 0.0, 0.0, 0.0, 1.0])),
        ("e^y", SmoothFunction::exp_sum(&[(1.0, 1.0)])),
        (
            "e^y+e^2y",
            SmoothFunction::exp_sum(&[(1.0, 1.0), (1.0, 2.0)]),
        ),
    ]
}

/// psi(x1, x2) = x1^2/2 + f(x2), the graph profile matching a plane wave profile.
pub fn graph_psi(f: &SmoothFunction) -> CoordFn {
    let half_sq = CoordFn::from_profile(2, 0, SmoothFunction::poly(&[0.0, 0.0, 0.5]));
    half_sq.add(&CoordFn::from_profile(2, 1, f.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothfn::SmoothFunction as SF;

    fn mf(f: SF) -> MetricSpec {
        MetricSpec::profile(f)
    }

    fn y2() -> SF {
        SF::poly(&[0.0, 0.0, 1.0])
    }

    #[test]
    fn metric_entries_profile() {
        let spec = mf(y2());
        let g = metric_at(&spec, &ChartPoint::xy(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(g[(0, 0)], -2.0);
        assert_eq!(g[(0, 2)], 1.0);
        assert_eq!(g[(1, 3)], 1.0);
        assert_eq!(g[(1, 1)], 0.0);
        assert_eq!(g[(2, 2)], 0.0);
        // flat profile
        let flat = mf(SF::zero());
        let g0 = metric_at(&flat, &ChartPoint::origin(2)).unwrap();
        assert_eq!(g0[(0, 0)], 0.0);
    }

    #[test]
    fn metric_signature_is_neutral() {
        let spec = mf(SF::exp_sum(&[(1.0, 1.0), (1.0, 2.0)]));
        let g = metric_at(&spec, &ChartPoint::xy(0.3, -0.7, 2.0, 1.0)).unwrap();
        assert_eq!(g, g.transpose());
        let eig = g.symmetric_eigen();
        let pos = eig.eigenvalues.iter().filter(|&&v| v > 0.0).count();
        assert_eq!(pos, 2);
    }

    #[test]
    fn metric_hypersurface_pullback() {
        // psi = x1^2/2 + x2^2, gradient (1, 2) at (1,1)
        let psi = CoordFn::from_profile(2, 0, SF::poly(&[0.0, 0.0, 0.5]))
            .add(&CoordFn::from_profile(2, 1, SF::poly(&[0.0, 0.0, 1.0])));
        let spec = MetricSpec::hypersurface(psi);
        let g = metric_at(&spec, &ChartPoint::xy(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(0, 1)], 2.0);
        assert_eq!(g[(1, 1)], 4.0);
        assert_eq!(g[(0, 2)], 1.0);
        assert_eq!(g[(1, 3)], 1.0);
    }

    #[test]
    fn christoffel_profile_example() {
        // f = y^2 at y = 3: nabla_dx dx = 6 dyt, nabla_dx dy = -6 dxt
        let spec = mf(y2());
        let gam = christoffel(&spec, &ChartPoint::xy(0.0, 3.0, 0.0, 0.0)).unwrap();
        assert_eq!(gam[gamma_index(2, 0, 0, 1)], 6.0);
        assert_eq!(gam[gamma_index(2, 0, 1, 0)], -6.0);
        assert_eq!(gam[gamma_index(2, 1, 0, 0)], -6.0);
        assert_eq!(gam[gamma_index(2, 1, 1, 1)], 0.0);
        assert_eq!(gam[gamma_index(2, 0, 0, 0)], 0.0);
    }

    #[test]
    fn christoffel_flat_is_zero() {
        let spec = mf(SF::constant(5.0));
        let gam = christoffel(&spec, &ChartPoint::xy(1.0, 2.0, 3.0, 4.0)).unwrap();
        assert!(gam.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn christoffel_general_plane_wave() {
        // Xi_11 = -2 f(x2), f = y^2: Gamma_112 = f', Gamma_121 = Gamma_211 = -f'
        let mut xi = XiMatrix::zero(2);
        xi.set(0, 0, CoordFn::from_profile(2, 1, y2().scale(-2.0)));
        let spec = MetricSpec::plane_wave(xi);
        let gam = christoffel(&spec, &ChartPoint::xy(0.0, 2.0, 0.0, 0.0)).unwrap();
        assert_eq!(gam[gamma_index(2, 0, 0, 1)], 4.0);
        assert_eq!(gam[gamma_index(2, 0, 1, 0)], -4.0);
        assert_eq!(gam[gamma_index(2, 1, 0, 0)], -4.0);
    }

    #[test]
    fn curvature_order_zero_examples() {
        // f = y^2: R(dx,dy,dy,dx) = f'' = 2, everywhere
        let spec = mf(y2());
        for y in [-1.0, 0.0, 2.5] {
            let t = curvature(&spec, &ChartPoint::xy(0.3, y, -1.0, 0.7), 0).unwrap();
            assert_eq!(t.get([0, 1, 1, 0], &[]), 2.0);
            assert_eq!(t.get([1, 0, 0, 1], &[]), 2.0);
            assert_eq!(t.get([0, 1, 0, 1], &[]), -2.0);
        }
        // f = e^y, k = 3 at y = 0: f^(5)(0) = 1
        let spec = mf(SF::exp_sum(&[(1.0, 1.0)]));
        let t = curvature(&spec, &ChartPoint::origin(2), 3).unwrap();
        assert_eq!(t.get([0, 1, 1, 0], &[1, 1, 1]), 1.0);
        // linear profile: empty table
        let spec = mf(SF::poly(&[3.0, 2.0]));
        for k in 0..4 {
            assert!(curvature(&spec, &ChartPoint::origin(2), k).unwrap().is_empty());
        }
    }

    #[test]
    fn curvature_k_cap() {
        let spec = mf(y2());
        assert!(matches!(
            curvature(&spec, &ChartPoint::origin(2), 9),
            Err(GeometryError::OrderTooLarge { .. })
        ));
    }

    #[test]
    fn quadratic_profile_has_parallel_curvature() {
        let spec = mf(y2());
        for y in [-2.0, 0.0, 1.0] {
            let t = curvature(&spec, &ChartPoint::xy(1.0, y, 0.0, 0.0), 1).unwrap();
            assert!(t.is_empty());
        }
    }

    #[test]
    fn fd_oracle_matches_exact() {
        let cases: Vec<MetricSpec> = vec![
            mf(y2()),
            mf(SF::exp_sum(&[(1.0, 1.0)])),
            mf(SF::zero()),
        ];
        for spec in &cases {
            let point = ChartPoint::xy(0.2, 0.4, -0.3, 0.9);
            let exact = curvature(spec, &point, 0).unwrap().to_dense4();
            let fd = curvature_fd_dense(spec, &point).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        for d in 0..4 {
                            assert!(
                                (exact.get(a, b, c, d) - fd.get(a, b, c, d)).abs() < 1e-5,
                                "mismatch at ({a},{b},{c},{d})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fd_oracle_hypersurface_value() {
        // psi = x1^2/2 + e^{x2}: R(d1,d2,d2,d1) = f''(0) = 1
        let psi = graph_psi(&SF::exp_sum(&[(1.0, 1.0)]));
        let spec = MetricSpec::hypersurface(psi);
        let t = curvature_fd_oracle(&spec, &ChartPoint::origin(2)).unwrap();
        assert!((t.get([0, 1, 1, 0], &[]) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn ricci_and_scalars_vanish() {
        let spec = mf(SF::exp_sum(&[(1.0, 1.0), (1.0, 2.0)]));
        let (ric, scal) = ricci_and_scalars(&spec, &ChartPoint::origin(2)).unwrap();
        assert_eq!(ric.amax(), 0.0);
        assert_eq!(scal.max_abs(), 0.0);

        let spec = mf(y2());
        let (ric, scal) =
            ricci_and_scalars(&spec, &ChartPoint::xy(1.0, -2.0, 0.5, 3.0)).unwrap();
        assert_eq!(ric.amax(), 0.0);
        assert_eq!(scal.max_abs(), 0.0);
    }

    #[test]
    fn fd_scalars_small() {
        let spec = mf(y2());
        let (ric, scal) = ricci_and_scalars_fd(&spec, &ChartPoint::xy(0.1, 0.3, 0.0, 0.0)).unwrap();
        assert!(ric.amax() < 1e-4);
        assert!(scal.max_abs() < 1e-4);
    }

    #[test]
    fn hyperbolic_frame_pairings() {
        let specs = vec![
            mf(y2()),
            mf(SF::exp_sum(&[(1.0, 1.0)])),
            MetricSpec::hypersurface(graph_psi(&SF::exp_sum(&[(1.0, 1.0)]))),
        ];
        for spec in &specs {
            let point = ChartPoint::xy(0.7, 0.2, -1.0, 0.4);
            let g = metric_at(spec, &point).unwrap();
            let frame = hyperbolic_frame(spec, &point).unwrap();
            let p = spec.p();
            for i in 0..2 * p {
                for j in 0..2 * p {
                    let pairing = (frame[i].transpose() * &g * &frame[j])[(0, 0)];
                    let expect = if i + p == j || j + p == i { 1.0 } else { 0.0 };
                    assert!(
                        (pairing - expect).abs() < 1e-12,
                        "pairing ({i},{j}) = {pairing}"
                    );
                }
            }
        }
        // X1 = dx + f dxt for the profile metric at y=1 (f=y^2 -> f=1)
        let frame = hyperbolic_frame(&mf(y2()), &ChartPoint::xy(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(frame[0][0], 1.0);
        assert_eq!(frame[0][2], 1.0);
        // flat: X_i = d_i
        let frame = hyperbolic_frame(&mf(SF::zero()), &ChartPoint::origin(2)).unwrap();
        assert_eq!(frame[0][2], 0.0);
    }

    #[test]
    fn embedding_normal_is_unit_and_orthogonal() {
        let psi = graph_psi(&SF::exp_sum(&[(1.0, 1.0)]));
        let point = ChartPoint::xy(1.0, 0.0, 0.3, -0.2);
        let (_, nu) = embed_hypersurface(&psi, &point).unwrap();
        assert!((ambient_inner(2, &nu, &nu) - 1.0).abs() < 1e-12);
        // gradient (1, 1) at x = (1, 0)
        assert_eq!(nu, vec![0.0, 0.0, -1.0, -1.0, 1.0]);
        for t in embedding_tangents(&psi, &point).unwrap() {
            assert!(ambient_inner(2, &nu, &t).abs() < 1e-12);
        }
        // psi = 0: normal is the last ambient axis
        let (_, nu0) = embed_hypersurface(&CoordFn::zero(2), &point).unwrap();
        assert_eq!(nu0, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn second_fundamental_form_is_hessian() {
        // psi = x1^2/2 + x2^4 at x2 = 1 -> diag(1, 12)
        let psi = graph_psi(&SF::poly(&[0.0, 0.0, 0.0, 0.0, 1.0]));
        let l = second_fundamental_form(&psi, &[0.0, 1.0]).unwrap();
        assert_eq!(l[(0, 0)], 1.0);
        assert_eq!(l[(1, 1)], 12.0);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn shape_and_plane_wave_routes_agree() {
        for f in [SF::exp_sum(&[(1.0, 1.0)]), y2(), SF::poly(&[0.0, 0.0, 0.0, 0.0, 1.0])] {
            let psi = graph_psi(&f);
            let spec = MetricSpec::hypersurface(psi.clone());
            for k in 0..=3 {
                let point = ChartPoint::xy(0.4, 0.6, 0.0, 0.0);
                let via_gamma = curvature(&spec, &point, k).unwrap();
                let via_shape = curvature_from_shape(&psi, &point, k).unwrap();
                assert_eq!(via_gamma, via_shape, "k = {k}");
            }
        }
    }

    #[test]
    fn graph_curvature_matches_profile_curvature() {
        // Gauss consistency: H_psi with psi = x1^2/2 + f(x2) has the same
        // curvature components as the profile metric, k <= 3.
        for f in [y2(), SF::exp_sum(&[(1.0, 1.0)])] {
            let mspec = mf(f.clone());
            let hspec = MetricSpec::hypersurface(graph_psi(&f));
            for k in 0..=3 {
                let point = ChartPoint::xy(0.0, 0.8, 0.0, 0.0);
                let a = curvature(&mspec, &point, k).unwrap();
                let b = curvature(&hspec, &point, k).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn curvature_symmetries() {
        let spec = mf(SF::exp_sum(&[(1.0, 1.0), (1.0, 2.0)]));
        let point = ChartPoint::xy(0.1, 0.2, 0.3, 0.4);
        let t = curvature(&spec, &point, 0).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        let v = t.get([a, b, c, d], &[]);
                        assert_eq!(v, -t.get([b, a, c, d], &[]));
                        assert_eq!(v, -t.get([a, b, d, c], &[]));
                        assert_eq!(v, t.get([c, d, a, b], &[]));
                    }
                }
            }
        }
    }

    #[test]
    fn sign_flag_mirrors_profile() {
        let plus = MetricSpec::profile(y2());
        let minus = MetricSpec::profile_signed(y2(), -1.0);
        let point = ChartPoint::xy(0.0, 1.0, 0.0, 0.0);
        let a = curvature(&plus, &point, 0).unwrap();
        let b = curvature(&minus, &point, 0).unwrap();
        assert_eq!(a.get([0, 1, 1, 0], &[]), -b.get([0, 1, 1, 0], &[]));
    }

    #[test]
    fn domain_violation_reported() {
        let spec = mf(SF::power(1.0, 0.0, 0.5));
        assert!(matches!(
            metric_at(&spec, &ChartPoint::xy(0.0, -1.0, 0.0, 0.0)),
            Err(GeometryError::Domain(_))
        ));
    }
}
