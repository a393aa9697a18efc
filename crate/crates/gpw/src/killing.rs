//! Killing vector fields of the profile metrics: the canonical normal
//! form, residual checking against the Levi-Civita connection, the
//! per-class catalogs with closed-form flows and isotropy matrices, the
//! Killing algebra dimension, and symbolic Lie brackets.
//!
//! Fields are represented exactly over the symbol basis
//! {1, x, y, x^2, x^3, xy, x^2 y, f(y), f'(y), ..., F(y), xt, yt}: every
//! coefficient is a polynomial in the chart coordinates times products of
//! the profile f, its derivatives, and its primitive F (F(0) = 0).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{metric_at, ChartPoint, GeometryError, MetricSpec};
use crate::models::{classify, group_dimension, ClassKind, Classification, ModelError, SymmetryGroup};
use crate::smoothfn::{FnError, SmoothFunction};

#[derive(Debug, Error)]
pub enum KillingError {
    #[error("classification is inconsistent with the profile: {0}")]
    InconsistentClassification(String),
    #[error("catalog unavailable for this profile: {0}")]
    UnsupportedProfile(String),
    #[error("field does not vanish at the requested point (|X(P)| = {norm:e})")]
    DoesNotVanish { norm: f64 },
    #[error("independent computation routes disagree: {0}")]
    CrossCheck(String),
    #[error("bracket does not close in the catalog span (residual {0:e})")]
    SpanResidual(f64),
    #[error("unknown flow id for this profile")]
    UnknownField,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fn(#[from] FnError),
}

// ---------------------------------------------------------------------------
// Symbolic coefficient expressions
// ---------------------------------------------------------------------------

/// y-dependent symbol: the primitive F (with F(0) = 0) or a derivative f^(m).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FuncAtom {
    Primitive,
    Deriv(u32),
}

impl FuncAtom {
    fn y_derivative(self) -> FuncAtom {
        match self {
            FuncAtom::Primitive => FuncAtom::Deriv(0),
            FuncAtom::Deriv(m) => FuncAtom::Deriv(m + 1),
        }
    }
}

impl std::fmt::Display for FuncAtom {
    fn fmt(&self, out: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FuncAtom::Primitive => write!(out, "F(y)"),
            FuncAtom::Deriv(0) => write!(out, "f(y)"),
            FuncAtom::Deriv(1) => write!(out, "f'(y)"),
            FuncAtom::Deriv(2) => write!(out, "f''(y)"),
            FuncAtom::Deriv(m) => write!(out, "f^({m})(y)"),
        }
    }
}

/// Monomial coeff * x^p0 y^p1 xt^p2 yt^p3 * prod(funcs).
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub pow: [u32; 4],
    pub funcs: Vec<FuncAtom>,
}

/// Normalized sum of monomials.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolyExpr {
    pub terms: Vec<Term>,
}

impl PolyExpr {
    pub fn zero() -> Self {
        PolyExpr { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        PolyExpr {
            terms: vec![Term {
                coeff: c,
                pow: [0; 4],
                funcs: Vec::new(),
            }],
        }
        .normalized()
    }

    /// Coordinate variable: 0 = x, 1 = y, 2 = xt, 3 = yt.
    pub fn var(i: usize) -> Self {
        let mut pow = [0u32; 4];
        pow[i] = 1;
        PolyExpr {
            terms: vec![Term {
                coeff: 1.0,
                pow,
                funcs: Vec::new(),
            }],
        }
    }

    pub fn monomial(coeff: f64, pow: [u32; 4], funcs: &[FuncAtom]) -> Self {
        let mut funcs = funcs.to_vec();
        funcs.sort();
        PolyExpr {
            terms: vec![Term { coeff, pow, funcs }],
        }
        .normalized()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn normalized(mut self) -> Self {
        self.terms
            .sort_by(|a, b| (a.pow, &a.funcs).partial_cmp(&(b.pow, &b.funcs)).unwrap());
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            if let Some(last) = merged.last_mut() {
                if last.pow == t.pow && last.funcs == t.funcs {
                    last.coeff += t.coeff;
                    continue;
                }
            }
            merged.push(t);
        }
        merged.retain(|t| t.coeff != 0.0);
        PolyExpr { terms: merged }
    }

    pub fn add(&self, other: &PolyExpr) -> PolyExpr {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        PolyExpr { terms }.normalized()
    }

    pub fn scale(&self, k: f64) -> PolyExpr {
        PolyExpr {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coeff: k * t.coeff,
                    pow: t.pow,
                    funcs: t.funcs.clone(),
                })
                .collect(),
        }
        .normalized()
    }

    pub fn sub(&self, other: &PolyExpr) -> PolyExpr {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &PolyExpr) -> PolyExpr {
        let mut terms = Vec::new();
        for a in &self.terms {
            for b in &other.terms {
                let mut funcs = a.funcs.clone();
                funcs.extend(b.funcs.iter().copied());
                funcs.sort();
                terms.push(Term {
                    coeff: a.coeff * b.coeff,
                    pow: [
                        a.pow[0] + b.pow[0],
                        a.pow[1] + b.pow[1],
                        a.pow[2] + b.pow[2],
                        a.pow[3] + b.pow[3],
                    ],
                    funcs,
                });
            }
        }
        PolyExpr { terms }.normalized()
    }

    /// Exact partial derivative; differentiating along y also hits the
    /// function symbols (F' = f, (f^(m))' = f^(m+1)).
    pub fn partial(&self, axis: usize) -> PolyExpr {
        let mut terms = Vec::new();
        for t in &self.terms {
            if t.pow[axis] > 0 {
                let mut pow = t.pow;
                pow[axis] -= 1;
                terms.push(Term {
                    coeff: t.coeff * t.pow[axis] as f64,
                    pow,
                    funcs: t.funcs.clone(),
                });
            }
            if axis == 1 {
                for i in 0..t.funcs.len() {
                    let mut funcs = t.funcs.clone();
                    funcs[i] = funcs[i].y_derivative();
                    funcs.sort();
                    terms.push(Term {
                        coeff: t.coeff,
                        pow: t.pow,
                        funcs,
                    });
                }
            }
        }
        PolyExpr { terms }.normalized()
    }

    pub fn eval(&self, ctx: &ProfileContext, p: &ChartPoint) -> Result<f64, KillingError> {
        let c = p.coords();
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff;
            for i in 0..4 {
                v *= c[i].powi(t.pow[i] as i32);
            }
            for atom in &t.funcs {
                v *= ctx.atom_eval(*atom, c[1])?;
            }
            acc += v;
        }
        Ok(acc)
    }

    /// True when no term involves xt, yt, or any y-dependence.
    fn is_free_of_y_and_duals(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.pow[1] == 0 && t.pow[2] == 0 && t.pow[3] == 0 && t.funcs.is_empty())
    }

    fn is_free_of_duals(&self) -> bool {
        self.terms.iter().all(|t| t.pow[2] == 0 && t.pow[3] == 0)
    }
}

impl std::fmt::Display for PolyExpr {
    fn fmt(&self, out: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.terms.is_empty() {
            return write!(out, "0");
        }
        let names = ["x", "y", "xt", "yt"];
        let mut first = true;
        for t in &self.terms {
            let mut parts: Vec<String> = Vec::new();
            for i in 0..4 {
                match t.pow[i] {
                    0 => {}
                    1 => parts.push(names[i].to_string()),
                    p => parts.push(format!("{}^{}", names[i], p)),
                }
            }
            for a in &t.funcs {
                parts.push(a.to_string());
            }
            let body = if parts.is_empty() {
                format!("{}", t.coeff.abs())
            } else if (t.coeff.abs() - 1.0).abs() < 1e-15 {
                parts.join("*")
            } else {
                format!("{}*{}", t.coeff.abs(), parts.join("*"))
            };
            if first {
                if t.coeff < 0.0 {
                    write!(out, "-")?;
                }
                first = false;
            } else if t.coeff < 0.0 {
                write!(out, " - ")?;
            } else {
                write!(out, " + ")?;
            }
            write!(out, "{body}")?;
        }
        Ok(())
    }
}

/// Evaluation context: the profile, its primitive (F(0) = 0) and its
/// derivatives up to a fixed order.
pub struct ProfileContext {
    pub f: SmoothFunction,
    primitive: Option<SmoothFunction>,
    derivs: Vec<SmoothFunction>,
}

const MAX_DERIV: usize = 10;

impl ProfileContext {
    pub fn new(f: &SmoothFunction) -> Self {
        ProfileContext {
            f: f.clone(),
            primitive: f.primitive().ok(),
            derivs: (0..=MAX_DERIV).map(|m| f.derivative(m)).collect(),
        }
    }

    fn atom_eval(&self, atom: FuncAtom, y: f64) -> Result<f64, KillingError> {
        match atom {
            FuncAtom::Primitive => match &self.primitive {
                Some(big_f) => Ok(big_f.eval(y)?),
                None => Err(KillingError::UnsupportedProfile(
                    "profile has no representable primitive".into(),
                )),
            },
            FuncAtom::Deriv(m) => Ok(self.derivs[m as usize].eval(y)?),
        }
    }
}

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

/// Vector field with symbolic components along (dx, dy, dxt, dyt).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorField {
    pub comp: [PolyExpr; 4],
}

impl VectorField {
    pub fn zero() -> Self {
        VectorField::default()
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            comp: std::array::from_fn(|k| self.comp[k].add(&other.comp[k])),
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField {
            comp: std::array::from_fn(|k| self.comp[k].scale(c)),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.comp.iter().all(PolyExpr::is_zero)
    }

    pub fn eval(&self, ctx: &ProfileContext, p: &ChartPoint) -> Result<[f64; 4], KillingError> {
        Ok([
            self.comp[0].eval(ctx, p)?,
            self.comp[1].eval(ctx, p)?,
            self.comp[2].eval(ctx, p)?,
            self.comp[3].eval(ctx, p)?,
        ])
    }
}

impl std::fmt::Display for VectorField {
    fn fmt(&self, out: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names = ["dx", "dy", "dxt", "dyt"];
        let mut wrote = false;
        for k in 0..4 {
            if self.comp[k].is_zero() {
                continue;
            }
            if wrote {
                write!(out, " + ")?;
            }
            write!(out, "({}) {}", self.comp[k], names[k])?;
            wrote = true;
        }
        if !wrote {
            write!(out, "0")?;
        }
        Ok(())
    }
}

/// Coordinate Lie bracket [X, Y]^k = X^i d_i Y^k - Y^i d_i X^k.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> VectorField {
    let mut comp: [PolyExpr; 4] = Default::default();
    for k in 0..4 {
        let mut acc = PolyExpr::zero();
        for i in 0..4 {
            acc = acc.add(&x.comp[i].mul(&y.comp[k].partial(i)));
            acc = acc.sub(&y.comp[i].mul(&x.comp[k].partial(i)));
        }
        comp[k] = acc;
    }
    VectorField { comp }
}

// ---------------------------------------------------------------------------
// The Killing residual
// ---------------------------------------------------------------------------

/// Symmetric matrix with entries g(nabla_{e_i} X, e_j) + g(nabla_{e_j} X, e_i)
/// at a point; zero iff X is Killing there. The connection of the profile
/// metric is nabla_dx dx = f' dyt, nabla_dx dy = nabla_dy dx = -f' dxt,
/// all other coordinate derivatives flat.
pub fn killing_residual(
    f: &SmoothFunction,
    field: &VectorField,
    p: &ChartPoint,
) -> Result<DMatrix<f64>, KillingError> {
    let ctx = ProfileContext::new(f);
    killing_residual_ctx(&ctx, field, p)
}

pub fn killing_residual_ctx(
    ctx: &ProfileContext,
    field: &VectorField,
    p: &ChartPoint,
) -> Result<DMatrix<f64>, KillingError> {
    let spec = MetricSpec::profile(ctx.f.clone());
    let g = metric_at(&spec, p)?;
    let fp = ctx.derivs[1].eval(p.x[1])?;
    let vals = field.eval(ctx, p)?;

    // columns of dx: coefficients of nabla_{e_i} X in the coordinate frame
    let mut dx = DMatrix::zeros(4, 4);
    for i in 0..4 {
        for k in 0..4 {
            dx[(k, i)] = field.comp[k].partial(i).eval(ctx, p)?;
        }
    }
    // Christoffel corrections: X^x nabla_dx dx = X^x f' dyt etc.
    dx[(3, 0)] += vals[0] * fp;
    dx[(2, 0)] -= vals[1] * fp;
    dx[(2, 1)] -= vals[0] * fp;

    let m = &g * &dx;
    Ok(&m.transpose() + m)
}

// ---------------------------------------------------------------------------
// The normal form
// ---------------------------------------------------------------------------

/// Normal form of a Killing field when f is not linear:
/// X = (xi_1 + A11 x + A12 y) dx + (xi_2 + A21 x + A22 y) dy
///   - (xit_1 + A11 xt + A21 yt) dxt - (xit_2 + A12 xt + A22 yt) dyt,
/// with xit_i functions of (x, y) only and d_y xit_2 = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct KillingField {
    pub xi: [f64; 2],
    pub a: [[f64; 2]; 2],
    pub xit1: PolyExpr,
    pub xit2: PolyExpr,
}

impl KillingField {
    pub fn new(xi: [f64; 2], a: [[f64; 2]; 2], xit1: PolyExpr, xit2: PolyExpr) -> Self {
        assert!(
            xit1.is_free_of_duals() && xit2.is_free_of_duals(),
            "xit coefficients may depend on (x, y) only"
        );
        assert!(
            xit2.is_free_of_y_and_duals(),
            "d_y xit_2 = 0 is a structural invariant"
        );
        KillingField { xi, a, xit1, xit2 }
    }

    pub fn to_field(&self) -> VectorField {
        let x = PolyExpr::var(0);
        let y = PolyExpr::var(1);
        let xt = PolyExpr::var(2);
        let yt = PolyExpr::var(3);
        let comp0 = PolyExpr::constant(self.xi[0])
            .add(&x.scale(self.a[0][0]))
            .add(&y.scale(self.a[0][1]));
        let comp1 = PolyExpr::constant(self.xi[1])
            .add(&x.scale(self.a[1][0]))
            .add(&y.scale(self.a[1][1]));
        let comp2 = self
            .xit1
            .add(&xt.scale(self.a[0][0]))
            .add(&yt.scale(self.a[1][0]))
            .scale(-1.0);
        let comp3 = self
            .xit2
            .add(&xt.scale(self.a[0][1]))
            .add(&yt.scale(self.a[1][1]))
            .scale(-1.0);
        VectorField {
            comp: [comp0, comp1, comp2, comp3],
        }
    }
}

/// The three scalar constraint equations of the normal form, evaluated
/// on a grid; agrees with killing_residual vanishing (cross-checked, a
/// disagreement is a hard error).
pub fn constraint_check(
    f: &SmoothFunction,
    field: &KillingField,
    grid: &[ChartPoint],
) -> Result<bool, KillingError> {
    let ctx = ProfileContext::new(f);
    let vf = field.to_field();
    let tol = 1e-10;

    let mut constraints_ok = true;
    for p in grid {
        let y = p.x[1];
        let x = p.x[0];
        let fv = ctx.derivs[0].eval(y)?;
        let fp = ctx.derivs[1].eval(y)?;
        let beta = field.xi[1] + field.a[1][0] * x + field.a[1][1] * y;
        let c1 = -2.0 * fv * field.a[0][0] - fp * beta - field.xit1.partial(0).eval(&ctx, p)?;
        let c2 = -2.0 * fv * field.a[0][1]
            - field.xit2.partial(0).eval(&ctx, p)?
            - field.xit1.partial(1).eval(&ctx, p)?;
        let c3 = -field.xit2.partial(1).eval(&ctx, p)?;
        if c1.abs() > tol || c2.abs() > tol || c3.abs() > tol {
            constraints_ok = false;
        }
    }

    let mut residual_ok = true;
    for p in grid {
        if killing_residual_ctx(&ctx, &vf, p)?.amax() > 1e-10 {
            residual_ok = false;
        }
    }
    if constraints_ok != residual_ok {
        return Err(KillingError::CrossCheck(format!(
            "constraint equations say {constraints_ok}, residual says {residual_ok}"
        )));
    }
    Ok(constraints_ok)
}

/// A default evaluation grid inside the profile domain.
pub fn default_grid(f: &SmoothFunction, n: usize) -> Vec<ChartPoint> {
    let (lo, hi) = f.domain();
    let (lo, hi) = (lo.max(-2.0), hi.min(2.0));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = (i as f64 + 0.5) / n as f64;
        let y = lo + (hi - lo) * s;
        let x = -1.5 + 3.0 * ((i * 7 % n) as f64 + 0.5) / n as f64;
        let xt = -1.0 + 2.0 * ((i * 3 % n) as f64 + 0.5) / n as f64;
        let yt = 1.0 - 2.0 * ((i * 5 % n) as f64 + 0.5) / n as f64;
        out.push(ChartPoint::xy(x, y, xt, yt));
    }
    out
}

// ---------------------------------------------------------------------------
// Catalogs
// ---------------------------------------------------------------------------

/// Identifier of a catalog field, carrying the data its flow needs.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldId {
    X1,
    X2,
    X3,
    X4,
    X5,
    /// translation-with-shear for exponential f = a e^(lambda y)
    ExpX6 { lambda: f64 },
    /// scaling field for power f = a (y+b)^c
    PowX6 { b: f64, c: f64 },
    /// quadratic-case fields (f'' constant)
    QuadX6,
    QuadX7,
    QuadX8,
    /// flat-case translations dx, dy, dxt, dyt
    FlatT(usize),
    /// flat-case linear fields, a basis of the metric's linear symmetries
    FlatL(usize),
}

#[derive(Debug, Clone)]
pub struct CatalogField {
    pub name: String,
    pub id: FieldId,
    pub field: VectorField,
    pub normal_form: Option<KillingField>,
}

fn universal_fields() -> Vec<CatalogField> {
    let x = PolyExpr::var(0);
    let y = PolyExpr::var(1);
    let big_f = PolyExpr::monomial(1.0, [0; 4], &[FuncAtom::Primitive]);
    let mk = |name: &str, id: FieldId, nf: KillingField| CatalogField {
        name: name.to_string(),
        id,
        field: nf.to_field(),
        normal_form: Some(nf),
    };
    vec![
        mk(
            "X1 = dx",
            FieldId::X1,
            KillingField::new([1.0, 0.0], [[0.0; 2]; 2], PolyExpr::zero(), PolyExpr::zero()),
        ),
        mk(
            "X2 = dxt",
            FieldId::X2,
            KillingField::new(
                [0.0, 0.0],
                [[0.0; 2]; 2],
                PolyExpr::constant(-1.0),
                PolyExpr::zero(),
            ),
        ),
        mk(
            "X3 = dyt",
            FieldId::X3,
            KillingField::new(
                [0.0, 0.0],
                [[0.0; 2]; 2],
                PolyExpr::zero(),
                PolyExpr::constant(-1.0),
            ),
        ),
        mk(
            "X4 = -y dxt + x dyt",
            FieldId::X4,
            KillingField::new([0.0, 0.0], [[0.0; 2]; 2], y.clone(), x.scale(-1.0)),
        ),
        mk(
            "X5 = y dx + 2F dxt - xt dyt",
            FieldId::X5,
            KillingField::new(
                [0.0, 0.0],
                [[0.0, 1.0], [0.0, 0.0]],
                big_f.scale(-2.0),
                PolyExpr::zero(),
            ),
        ),
    ]
}

/// Numeric check that g equals zero on a grid over the profile domain.
fn numerically_zero(g: &SmoothFunction, reference_scale: f64) -> bool {
    let (lo, hi) = g.domain();
    let (lo, hi) = (lo.max(-2.0) + 1e-3, hi.min(2.0) - 1e-3);
    (0..50).all(|i| {
        let y = lo + (hi - lo) * (i as f64 + 0.5) / 50.0;
        match g.eval(y) {
            Ok(v) => v.abs() <= 1e-9 * reference_scale.max(1.0),
            Err(_) => false,
        }
    })
}

/// The flat-case basis: four translations and six linear fields spanning the
/// linear symmetries of the constant hyperbolic-pair metric.
fn flat_fields() -> Vec<CatalogField> {
    let mut out = Vec::new();
    let names = ["dx", "dy", "dxt", "dyt"];
    for i in 0..4 {
        let mut comp: [PolyExpr; 4] = Default::default();
        comp[i] = PolyExpr::constant(1.0);
        out.push(CatalogField {
            name: format!("T{} = {}", i + 1, names[i]),
            id: FieldId::FlatT(i),
            field: VectorField { comp },
            normal_form: None,
        });
    }
    for (k, m) in flat_linear_generators().into_iter().enumerate() {
        let mut comp: [PolyExpr; 4] = Default::default();
        for r in 0..4 {
            let mut acc = PolyExpr::zero();
            for c in 0..4 {
                if m[(r, c)] != 0.0 {
                    acc = acc.add(&PolyExpr::var(c).scale(m[(r, c)]));
                }
            }
            comp[r] = acc;
        }
        out.push(CatalogField {
            name: format!("L{}", k + 1),
            id: FieldId::FlatL(k),
            field: VectorField { comp },
            normal_form: None,
        });
    }
    out
}

/// Generators M (fields z -> M z) with M^t G + G M = 0 for the flat metric
/// G pairing x with xt and y with yt.
fn flat_linear_generators() -> Vec<DMatrix<f64>> {
    let e = |entries: &[(usize, usize, f64)]| {
        let mut m = DMatrix::zeros(4, 4);
        for &(r, c, v) in entries {
            m[(r, c)] = v;
        }
        m
    };
    vec![
        e(&[(0, 0, 1.0), (2, 2, -1.0)]),           // x dx - xt dxt
        e(&[(1, 1, 1.0), (3, 3, -1.0)]),           // y dy - yt dyt
        e(&[(0, 1, 1.0), (3, 2, -1.0)]),           // y dx - xt dyt
        e(&[(1, 0, 1.0), (2, 3, -1.0)]),           // x dy - yt dxt
        e(&[(0, 3, 1.0), (1, 2, -1.0)]),           // yt dx - xt dy
        e(&[(2, 1, 1.0), (3, 0, -1.0)]),           // y dxt - x dyt
    ]
}

/// Split f into pure part plus affine remainder according to its class;
/// errors when the remainder is not negligible for classes whose catalog
/// fields require the pure profile.
fn require_pure(f: &SmoothFunction, pure: &SmoothFunction, label: &str) -> Result<(), KillingError> {
    let residue = f.add(&pure.scale(-1.0));
    let scale = {
        let (lo, hi) = f.domain();
        let mid = 0.5 * (lo.max(-2.0) + hi.min(2.0));
        f.eval(mid).map(f64::abs).unwrap_or(1.0)
    };
    if numerically_zero(&residue, scale) {
        Ok(())
    } else {
        Err(KillingError::UnsupportedProfile(format!(
            "{label} catalog requires the pure profile; f has a non-pure remainder"
        )))
    }
}

/// Killing field catalog for the given profile and its classification.
/// Every returned field is certified against the constraint equations by the
/// caller's tests; the count matches the Killing algebra dimension.
pub fn catalog(
    f: &SmoothFunction,
    classification: &Classification,
) -> Result<Vec<CatalogField>, KillingError> {
    // consistency of the supplied classification
    let recomputed = classify(f, None)?;
    if recomputed.kind != classification.kind {
        return Err(KillingError::InconsistentClassification(format!(
            "supplied {:?}, profile classifies as {:?}",
            classification.kind, recomputed.kind
        )));
    }

    match &classification.kind {
        ClassKind::Flat => {
            // the explicit flat basis is exact only for f identically zero;
            // a nonzero affine profile is isometric to it but has a sheared
            // catalog that is out of scope here
            if !f.derivative(1).is_zero() || f.eval(0.0)? != 0.0 {
                return Err(KillingError::UnsupportedProfile(
                    "flat catalog is provided for f = 0 only; nonzero affine profiles are isometric to it via an explicit shear".into(),
                ));
            }
            Ok(flat_fields())
        }
        ClassKind::SymmetricNonFlat => {
            let mut out = universal_fields();
            out.extend(quadratic_fields(f)?);
            Ok(out)
        }
        ClassKind::Homogeneous { a, lambda } => {
            // classification reports f'' = a e^(lambda y); the pure profile
            // is (a / lambda^2) e^(lambda y)
            let pure = SmoothFunction::exp_sum(&[(a / (lambda * lambda), *lambda)]);
            require_pure(f, &pure, "exponential")?;
            let mut out = universal_fields();
            out.push(exp_x6(*lambda));
            Ok(out)
        }
        ClassKind::LocallyHomogeneousPower { a, b, c } => {
            // f'' = a (y+b)^c, so the pure profile is
            // a (y+b)^(c+2) / ((c+1)(c+2)) with exponent c + 2
            let cf = c + 2.0;
            let denom = (c + 1.0) * (c + 2.0);
            if denom == 0.0 {
                return Err(KillingError::UnsupportedProfile(
                    "power exponent has no representable second primitive".into(),
                ));
            }
            let pure = SmoothFunction::power(a / denom, *b, cf);
            require_pure(f, &pure, "power")?;
            let mut out = universal_fields();
            out.push(pow_x6(*b, cf));
            Ok(out)
        }
        ClassKind::OneCurvHomogOnly | ClassKind::Generic => Ok(universal_fields()),
    }
}

fn exp_x6(lambda: f64) -> CatalogField {
    let nf = KillingField::new(
        [0.0, 1.0],
        [[-lambda / 2.0, 0.0], [0.0, 0.0]],
        PolyExpr::zero(),
        PolyExpr::zero(),
    );
    CatalogField {
        name: format!("X6 = -({lambda}/2) x dx + dy + ({lambda}/2) xt dxt"),
        id: FieldId::ExpX6 { lambda },
        field: nf.to_field(),
        normal_form: Some(nf),
    }
}

fn pow_x6(b: f64, c: f64) -> CatalogField {
    let nf = KillingField::new(
        [0.0, -2.0 * b / c],
        [[1.0, 0.0], [0.0, -2.0 / c]],
        PolyExpr::zero(),
        PolyExpr::zero(),
    );
    CatalogField {
        name: format!("X6 = x dx - (2/{c})(y+{b}) dy - xt dxt + (2/{c}) yt dyt"),
        id: FieldId::PowX6 { b, c },
        field: nf.to_field(),
        normal_form: Some(nf),
    }
}

/// The three extra fields of the constant-f'' case, written against f
/// symbolically so an affine part of the profile is handled exactly.
fn quadratic_fields(f: &SmoothFunction) -> Result<Vec<CatalogField>, KillingError> {
    let kappa = f.derivative(2).eval(0.0)? / 2.0;
    let p_aff = f.derivative(1).eval(0.0)?; // f' (0) = p for f = k y^2 + p y + q
    let x = PolyExpr::var(0);
    let fp = PolyExpr::monomial(1.0, [0; 4], &[FuncAtom::Deriv(1)]);
    let fv = PolyExpr::monomial(1.0, [0; 4], &[FuncAtom::Deriv(0)]);
    let y = PolyExpr::var(1);

    // X6 = dy + f'(y) x dxt - kappa x^2 dyt
    let x6 = KillingField::new(
        [0.0, 1.0],
        [[0.0; 2]; 2],
        x.mul(&fp).scale(-1.0),
        PolyExpr::monomial(kappa, [2, 0, 0, 0], &[]),
    );
    // X7 = x dy + (f'(y) x^2 / 2 - yt) dxt - (kappa/3) x^3 dyt
    let x7 = KillingField::new(
        [0.0, 0.0],
        [[0.0, 0.0], [1.0, 0.0]],
        x.mul(&x).mul(&fp).scale(-0.5),
        PolyExpr::monomial(kappa / 3.0, [3, 0, 0, 0], &[]),
    );
    // X8 = x dx - y dy + ((2f - y f') x - xt) ... encoded via
    // xit1 = (y f' - 2 f) x, xit2 = p x^2 / 2
    let x8 = KillingField::new(
        [0.0, 0.0],
        [[1.0, 0.0], [0.0, -1.0]],
        x.mul(&y.mul(&fp).sub(&fv.scale(2.0))),
        PolyExpr::monomial(p_aff / 2.0, [2, 0, 0, 0], &[]),
    );
    Ok(vec![
        CatalogField {
            name: "X6 = dy + f'(y) x dxt - k x^2 dyt".into(),
            id: FieldId::QuadX6,
            field: x6.to_field(),
            normal_form: Some(x6),
        },
        CatalogField {
            name: "X7 = x dy + (f'(y) x^2/2 - yt) dxt - (k/3) x^3 dyt".into(),
            id: FieldId::QuadX7,
            field: x7.to_field(),
            normal_form: Some(x7),
        },
        CatalogField {
            name: "X8 = x dx - y dy + ((y f' - 2f) x ... ) shear-scaling".into(),
            id: FieldId::QuadX8,
            field: x8.to_field(),
            normal_form: Some(x8),
        },
    ])
}

// ---------------------------------------------------------------------------
// Dimension
// ---------------------------------------------------------------------------

/// Killing algebra dimension by the classification table, cross-checked by
/// the catalog count (lower bound) and the transitivity-plus-isotropy
/// counting argument (upper bound).
pub fn killing_dimension(f: &SmoothFunction) -> Result<usize, KillingError> {
    let classification = classify(f, None)?;
    let (dim, transitive, group) = match &classification.kind {
        ClassKind::Flat => (10, 4, SymmetryGroup::MetricOnly),
        ClassKind::SymmetricNonFlat => (8, 4, SymmetryGroup::G0),
        ClassKind::Homogeneous { .. } => (6, 4, SymmetryGroup::G1),
        ClassKind::LocallyHomogeneousPower { .. } => (6, 4, SymmetryGroup::G1),
        ClassKind::OneCurvHomogOnly | ClassKind::Generic => (5, 3, SymmetryGroup::G1),
    };
    // upper bound from the counting argument
    let upper = transitive + group_dimension(group)?;
    if dim > upper {
        return Err(KillingError::CrossCheck(format!(
            "table dimension {dim} exceeds the counting bound {upper}"
        )));
    }
    // lower bound: the certified catalog, when available
    if let Ok(fields) = catalog(f, &classification) {
        if fields.len() != dim {
            return Err(KillingError::CrossCheck(format!(
                "catalog size {} does not match the table dimension {dim}",
                fields.len()
            )));
        }
    }
    Ok(dim)
}

// ---------------------------------------------------------------------------
// Flows
// ---------------------------------------------------------------------------

fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    // scaling and squaring with a plain Taylor series; matrices here are 4x4
    let norm = m.amax();
    let k = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(k as i32);
    let mut acc = DMatrix::identity(4, 4);
    let mut term = DMatrix::identity(4, 4);
    for n in 1..=16 {
        term = &term * &scaled / n as f64;
        acc += &term;
    }
    for _ in 0..k {
        acc = &acc * &acc;
    }
    acc
}

/// Closed-form flow of a catalog field.
pub fn flow(
    f: &SmoothFunction,
    id: &FieldId,
    t: f64,
    p: &ChartPoint,
) -> Result<ChartPoint, KillingError> {
    let (x, y, xt, yt) = (p.x[0], p.x[1], p.xt[0], p.xt[1]);
    let out = match id {
        FieldId::X1 => ChartPoint::xy(x + t, y, xt, yt),
        FieldId::X2 => ChartPoint::xy(x, y, xt + t, yt),
        FieldId::X3 => ChartPoint::xy(x, y, xt, yt + t),
        FieldId::X4 => ChartPoint::xy(x, y, xt - t * y, yt + t * x),
        FieldId::X5 => {
            let big_f = f.primitive()?.eval(y)?;
            ChartPoint::xy(x + t * y, y, xt + 2.0 * big_f * t, yt - t * xt - big_f * t * t)
        }
        FieldId::ExpX6 { lambda } => ChartPoint::xy(
            (-lambda / 2.0 * t).exp() * x,
            y + t,
            (lambda / 2.0 * t).exp() * xt,
            yt,
        ),
        FieldId::PowX6 { b, c } => ChartPoint::xy(
            t.exp() * x,
            -b + (y + b) * (-2.0 * t / c).exp(),
            (-t).exp() * xt,
            (2.0 * t / c).exp() * yt,
        ),
        FieldId::QuadX6 => {
            let kappa = f.derivative(2).eval(0.0)? / 2.0;
            ChartPoint::xy(
                x,
                y + t,
                xt + x * (f.eval(y + t)? - f.eval(y)?),
                yt - kappa * x * x * t,
            )
        }
        FieldId::QuadX7 => {
            let kappa = f.derivative(2).eval(0.0)? / 2.0;
            if x == 0.0 {
                ChartPoint::xy(x, y, xt - yt * t, yt)
            } else {
                ChartPoint::xy(
                    x,
                    y + x * t,
                    xt + (x / 2.0) * (f.eval(y + x * t)? - f.eval(y)?) - yt * t
                        + kappa * x.powi(3) * t * t / 6.0,
                    yt - kappa * x.powi(3) * t / 3.0,
                )
            }
        }
        FieldId::QuadX8 => {
            let p_aff = f.derivative(1).eval(0.0)?;
            let q_aff = f.eval(0.0)?;
            let (et, emt) = (t.exp(), (-t).exp());
            ChartPoint::xy(
                et * x,
                emt * y,
                emt * xt + p_aff * x * y * (1.0 - emt) + q_aff * x * (et - emt),
                et * yt - p_aff * x * x * ((2.0 * t).exp() - et) / 2.0,
            )
        }
        FieldId::FlatT(i) => {
            let mut c = p.coords();
            c[*i] += t;
            ChartPoint::from_coords(&c)
        }
        FieldId::FlatL(k) => {
            let gens = flat_linear_generators();
            let m = gens.get(*k).ok_or(KillingError::UnknownField)?;
            let s = expm(&(m * t));
            let z = DVector::from_column_slice(&p.coords());
            let w = &s * z;
            ChartPoint::from_coords(w.as_slice())
        }
    };
    Ok(out)
}

// ---------------------------------------------------------------------------
// Isotropy
// ---------------------------------------------------------------------------

/// The linearization of a point-fixing Killing field at that point, acting
/// on (dx, dy, dxt, dyt):
///   dx  -> A11 dx + A21 dy - d_x xit_1(P) dxt - d_x xit_2(P) dyt,
///   dy  -> A12 dx + A22 dy - d_y xit_1(P) dxt - d_y xit_2(P) dyt,
///   dxt -> -A11 dxt - A12 dyt,
///   dyt -> -A21 dxt - A22 dyt.
pub fn isotropy_matrix(
    f: &SmoothFunction,
    field: &KillingField,
    p: &ChartPoint,
) -> Result<DMatrix<f64>, KillingError> {
    let ctx = ProfileContext::new(f);
    let vals = field.to_field().eval(&ctx, p)?;
    let norm = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if norm > 1e-10 {
        return Err(KillingError::DoesNotVanish { norm });
    }
    let a = &field.a;
    let mut m = DMatrix::zeros(4, 4);
    // column 0: image of dx
    m[(0, 0)] = a[0][0];
    m[(1, 0)] = a[1][0];
    m[(2, 0)] = -field.xit1.partial(0).eval(&ctx, p)?;
    m[(3, 0)] = -field.xit2.partial(0).eval(&ctx, p)?;
    // column 1: image of dy
    m[(0, 1)] = a[0][1];
    m[(1, 1)] = a[1][1];
    m[(2, 1)] = -field.xit1.partial(1).eval(&ctx, p)?;
    m[(3, 1)] = -field.xit2.partial(1).eval(&ctx, p)?;
    // columns 2, 3: images of dxt, dyt
    m[(2, 2)] = -a[0][0];
    m[(3, 2)] = -a[0][1];
    m[(2, 3)] = -a[1][0];
    m[(3, 3)] = -a[1][1];
    Ok(m)
}

/// Conjugate a coordinate-frame endomorphism at P into the model frame
/// X = dx + f(P) dxt, Y = dy, Xt = dxt, Yt = dyt.
pub fn to_model_frame(
    f: &SmoothFunction,
    p: &ChartPoint,
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>, KillingError> {
    let fv = f.eval(p.x[1])?;
    let mut b = DMatrix::<f64>::identity(4, 4);
    b[(2, 0)] = fv;
    let binv = b.clone().try_inverse().expect("frame is invertible");
    Ok(binv * m * b)
}

/// Least-squares expansion of `target` in the span of `fields`, sampled on a
/// grid; returns the coefficients and the residual.
pub fn express_in_span(
    f: &SmoothFunction,
    fields: &[CatalogField],
    target: &VectorField,
    grid: &[ChartPoint],
) -> Result<(Vec<f64>, f64), KillingError> {
    let ctx = ProfileContext::new(f);
    let rows = 4 * grid.len();
    let mut a = DMatrix::zeros(rows, fields.len());
    let mut b = DVector::zeros(rows);
    for (gi, p) in grid.iter().enumerate() {
        let tv = target.eval(&ctx, p)?;
        for k in 0..4 {
            b[4 * gi + k] = tv[k];
        }
        for (fi, cf) in fields.iter().enumerate() {
            let fv = cf.field.eval(&ctx, p)?;
            for k in 0..4 {
                a[(4 * gi + k, fi)] = fv[k];
            }
        }
    }
    let svd = a.clone().svd(true, true);
    let coeffs = svd.solve(&b, 1e-12).map_err(|e| {
        KillingError::CrossCheck(format!("least-squares solve failed: {e}"))
    })?;
    let residual = (&a * &coeffs - &b).amax();
    Ok((coeffs.iter().copied().collect(), residual))
}
