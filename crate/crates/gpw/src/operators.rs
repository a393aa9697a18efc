//! Jacobi and skew-symmetric curvature operators, nilpotent Jordan profiles,
//! and seeded sampling verification of the spacelike/timelike Jordan Osserman
//! and Jordan Ivanov-Petrova properties.
//!
//! The core operator builders work on raw (metric, curvature) data so the
//! same code path serves both manifold points and algebraic model spaces.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{
    curvature, inverse_metric_at, metric_at, ChartPoint, Dense4, GeometryError, MetricSpec,
};

/// Near-null rejection threshold for |g(xi, xi)|.
pub const TAU_NULL: f64 = 1e-8;
/// Relative singular value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("vector is null or nearly null: |g(xi,xi)| = {0:e}")]
    NearNull(f64),
    #[error("plane is degenerate or not definite orthonormal: {0}")]
    DegeneratePlane(String),
    #[error("matrix is not nilpotent within tolerance")]
    NotNilpotent,
    #[error("sampling failed to find a domain point after {0} tries")]
    SamplingExhausted(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// Jordan profiles
// ---------------------------------------------------------------------------

/// Rank sequence [rank M, rank M^2, ...] down to the first zero; the empty
/// sequence is the zero operator. For a nilpotent operator this determines
/// the Jordan normal form uniquely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JordanProfile {
    pub ranks: Vec<usize>,
}

impl JordanProfile {
    pub fn is_zero(&self) -> bool {
        self.ranks.is_empty()
    }
}

impl std::fmt::Display for JordanProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.ranks.iter().map(|r| r.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

fn svd_rank(m: &DMatrix<f64>, threshold: f64) -> usize {
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().filter(|&&s| s > threshold).count()
}

/// Rank sequence of powers of a (tolerantly) nilpotent matrix.
pub fn jordan_profile(m: &DMatrix<f64>) -> Result<JordanProfile, OperatorError> {
    let n = m.nrows();
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(JordanProfile { ranks: vec![] });
    }
    // nilpotency gate: ||M^n|| <= 1e-8 ||M||
    let mut power = m.clone();
    for _ in 1..n {
        power = &power * m;
    }
    if power.amax() > 1e-8 * scale {
        return Err(OperatorError::NotNilpotent);
    }

    let threshold = RANK_TOL * m.clone().svd(false, false).singular_values.max();
    let mut ranks = Vec::new();
    let mut power = m.clone();
    loop {
        let r = svd_rank(&power, threshold);
        ranks.push(r);
        if r == 0 {
            break;
        }
        power = &power * m;
    }
    if ranks == [0] {
        ranks.clear();
    }
    Ok(JordanProfile { ranks })
}

// ---------------------------------------------------------------------------
// Operators from raw (metric, curvature) data
// ---------------------------------------------------------------------------

/// Matrix of eta -> R(eta, xi) xi in the frame the data is expressed in.
pub fn jacobi_operator_from(
    g: &DMatrix<f64>,
    ginv: &DMatrix<f64>,
    r: &Dense4,
    xi: &[f64],
) -> Result<DMatrix<f64>, OperatorError> {
    let q = quadratic_form(g, xi, xi);
    if q.abs() <= TAU_NULL {
        return Err(OperatorError::NearNull(q.abs()));
    }
    Ok(jacobi_matrix_unchecked(ginv, r, xi))
}

fn jacobi_matrix_unchecked(ginv: &DMatrix<f64>, r: &Dense4, xi: &[f64]) -> DMatrix<f64> {
    let n = r.n;
    let mut m = DMatrix::zeros(n, n);
    // lowered image: (R(e_a, xi) xi)_d = sum_{b,c} xi_b xi_c R(a,b,c,d)
    for a in 0..n {
        for d in 0..n {
            let mut low = 0.0;
            for b in 0..n {
                if xi[b] == 0.0 {
                    continue;
                }
                for c in 0..n {
                    if xi[c] != 0.0 {
                        low += xi[b] * xi[c] * r.get(a, b, c, d);
                    }
                }
            }
            if low == 0.0 {
                continue;
            }
            for e in 0..n {
                m[(e, a)] += ginv[(e, d)] * low;
            }
        }
    }
    m
}

/// Oriented g-orthonormal definite 2-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPlane {
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// +1 spacelike, -1 timelike
    pub sign: f64,
}

impl OrientedPlane {
    /// Validate the orthonormal-definite invariants against g.
    pub fn new(g: &DMatrix<f64>, e1: Vec<f64>, e2: Vec<f64>) -> Result<Self, OperatorError> {
        let q11 = quadratic_form(g, &e1, &e1);
        let q22 = quadratic_form(g, &e2, &e2);
        let q12 = quadratic_form(g, &e1, &e2);
        let tol = 1e-9;
        if q12.abs() > tol {
            return Err(OperatorError::DegeneratePlane(format!(
                "g(e1,e2) = {q12:e} is not zero"
            )));
        }
        for (label, q) in [("e1", q11), ("e2", q22)] {
            if (q.abs() - 1.0).abs() > tol {
                return Err(OperatorError::DegeneratePlane(format!(
                    "g({label},{label}) = {q} is not unit"
                )));
            }
        }
        if q11.signum() != q22.signum() {
            return Err(OperatorError::DegeneratePlane(
                "mixed-signature plane contains null vectors".into(),
            ));
        }
        Ok(OrientedPlane {
            e1,
            e2,
            sign: q11.signum(),
        })
    }
}

pub fn quadratic_form(g: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let n = g.nrows();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            acc += g[(a, b)] * u[a] * v[b];
        }
    }
    acc
}

/// Matrix of eta -> R(e1, e2) eta.
pub fn skew_curvature_operator_from(
    ginv: &DMatrix<f64>,
    r: &Dense4,
    plane: &OrientedPlane,
) -> DMatrix<f64> {
    let n = r.n;
    let mut m = DMatrix::zeros(n, n);
    for c in 0..n {
        for d in 0..n {
            let mut low = 0.0;
            for a in 0..n {
                if plane.e1[a] == 0.0 {
                    continue;
                }
                for b in 0..n {
                    if plane.e2[b] != 0.0 {
                        low += plane.e1[a] * plane.e2[b] * r.get(a, b, c, d);
                    }
                }
            }
            if low == 0.0 {
                continue;
            }
            for e in 0..n {
                m[(e, c)] += ginv[(e, d)] * low;
            }
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Manifold-point wrappers
// ---------------------------------------------------------------------------

/// Jacobi operator J(xi) eta = R(eta, xi) xi at a manifold point, in the
/// coordinate frame; rejects near-null xi.
pub fn jacobi_operator(
    spec: &MetricSpec,
    point: &ChartPoint,
    xi: &[f64],
) -> Result<DMatrix<f64>, OperatorError> {
    let g = metric_at(spec, point)?;
    let ginv = inverse_metric_at(spec, point)?;
    let r = curvature(spec, point, 0)?.to_dense4();
    jacobi_operator_from(&g, &ginv, &r, xi)
}

/// Skew-symmetric curvature operator R(pi) of an oriented definite plane.
pub fn skew_curvature_operator(
    spec: &MetricSpec,
    point: &ChartPoint,
    e1: &[f64],
    e2: &[f64],
) -> Result<DMatrix<f64>, OperatorError> {
    let g = metric_at(spec, point)?;
    let ginv = inverse_metric_at(spec, point)?;
    let plane = OrientedPlane::new(&g, e1.to_vec(), e2.to_vec())?;
    let r = curvature(spec, point, 0)?.to_dense4();
    Ok(skew_curvature_operator_from(&ginv, &r, &plane))
}

// ---------------------------------------------------------------------------
// Seeded sampling verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub point: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub profile: JordanProfile,
    pub expected: JordanProfile,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub property: String,
    pub samples_per_class: usize,
    pub seed: u64,
    pub spacelike_profile: Option<JordanProfile>,
    pub timelike_profile: Option<JordanProfile>,
    pub pass: bool,
    pub counterexample: Option<Counterexample>,
}

/// Sample a chart point with coordinates in [-2, 2], rejecting points
/// outside the metric domain.
fn sample_point(spec: &MetricSpec, rng: &mut ChaCha8Rng) -> Result<ChartPoint, OperatorError> {
    let n = spec.dim();
    for _ in 0..10_000 {
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pt = ChartPoint::from_coords(&c);
        if spec.in_domain(&pt).is_ok() {
            return Ok(pt);
        }
    }
    Err(OperatorError::SamplingExhausted(10_000))
}

/// Sample a unit vector (|g(xi,xi)| = 1); returns (xi, spacelike?).
fn sample_unit_vector(g: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Option<(Vec<f64>, bool)> {
    let n = g.nrows();
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let q = quadratic_form(g, &v, &v);
        if q.abs() <= TAU_NULL {
            continue;
        }
        let s = q.abs().sqrt();
        return Some((v.iter().map(|x| x / s).collect(), q > 0.0));
    }
    None
}

/// Sample an oriented orthonormal definite plane of the requested sign.
fn sample_plane(
    g: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
    want_spacelike: bool,
) -> Option<OrientedPlane> {
    let n = g.nrows();
    for _ in 0..10_000 {
        let (e1, space1) = sample_unit_vector(g, rng)?;
        if space1 != want_spacelike {
            continue;
        }
        let s1 = quadratic_form(g, &e1, &e1); // +-1
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // g-orthogonal projection away from e1
        let coef = quadratic_form(g, &e1, &v) / s1;
        let w: Vec<f64> = v.iter().zip(&e1).map(|(a, b)| a - coef * b).collect();
        let q = quadratic_form(g, &w, &w);
        if q.abs() <= TAU_NULL || (q > 0.0) != want_spacelike {
            continue;
        }
        let s = q.abs().sqrt();
        let e2: Vec<f64> = w.iter().map(|x| x / s).collect();
        if let Ok(plane) = OrientedPlane::new(g, e1, e2) {
            return Some(plane);
        }
    }
    None
}

fn run_sampling<F>(
    spec: &MetricSpec,
    property: &str,
    n_samples: usize,
    seed: u64,
    mut operator: F,
) -> Result<VerifyReport, OperatorError>
where
    F: FnMut(
        &ChartPoint,
        &DMatrix<f64>,
        &DMatrix<f64>,
        &Dense4,
        &mut ChaCha8Rng,
        bool,
    ) -> Result<Option<(DMatrix<f64>, Vec<Vec<f64>>)>, OperatorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles: [Option<JordanProfile>; 2] = [None, None];
    let mut report = VerifyReport {
        property: property.to_string(),
        samples_per_class: n_samples,
        seed,
        spacelike_profile: None,
        timelike_profile: None,
        pass: true,
        counterexample: None,
    };

    'outer: for (class, want_spacelike) in [(0usize, true), (1usize, false)] {
        let mut done = 0;
        while done < n_samples {
            let point = sample_point(spec, &mut rng)?;
            let g = metric_at(spec, &point)?;
            let ginv = inverse_metric_at(spec, &point)?;
            let r = curvature(spec, &point, 0)?.to_dense4();
            let Some((m, witnesses)) =
                operator(&point, &g, &ginv, &r, &mut rng, want_spacelike)?
            else {
                continue;
            };
            let profile = jordan_profile(&m)?;
            match &profiles[class] {
                None => profiles[class] = Some(profile),
                Some(expected) if *expected != profile => {
                    report.pass = false;
                    report.counterexample = Some(Counterexample {
                        point: point.coords(),
                        vectors: witnesses,
                        profile,
                        expected: expected.clone(),
                    });
                    break 'outer;
                }
                Some(_) => {}
            }
            done += 1;
        }
    }

    report.spacelike_profile = profiles[0].clone();
    report.timelike_profile = profiles[1].clone();
    Ok(report)
}

/// Draw unit spacelike and timelike vectors at random domain points and
/// check the Jacobi operator's Jordan profile is constant in each class.
pub fn verify_osserman(
    spec: &MetricSpec,
    n_samples: usize,
    seed: u64,
) -> Result<VerifyReport, OperatorError> {
    run_sampling(spec, "osserman", n_samples, seed, |_, g, ginv, r, rng, want| {
        let Some((xi, spacelike)) = sample_unit_vector(g, rng) else {
            return Ok(None);
        };
        if spacelike != want {
            return Ok(None);
        }
        let m = jacobi_operator_from(g, ginv, r, &xi)?;
        Ok(Some((m, vec![xi])))
    })
}

/// Same over oriented definite orthonormal 2-planes with the skew operator.
pub fn verify_ivanov_petrova(
    spec: &MetricSpec,
    n_samples: usize,
    seed: u64,
) -> Result<VerifyReport, OperatorError> {
    run_sampling(spec, "ip", n_samples, seed, |_, g, ginv, r, rng, want| {
        let Some(plane) = sample_plane(g, rng, want) else {
            return Ok(None);
        };
        let m = skew_curvature_operator_from(ginv, r, &plane);
        Ok(Some((m, vec![plane.e1.clone(), plane.e2.clone()])))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothfn::SmoothFunction as SF;
    use nalgebra::DVector;

    fn y2() -> SF {
        SF::poly(&[0.0, 0.0, 1.0])
    }

    /// The rank-one model: hyperbolic pairings <X,Xt> = <Y,Yt> = 1 and the
    /// single curvature component R(X,Y,Y,X) = 1, basis order (X,Y,Xt,Yt).
    fn model_u0() -> (DMatrix<f64>, DMatrix<f64>, Dense4) {
        let mut g = DMatrix::zeros(4, 4);
        g[(0, 2)] = 1.0;
        g[(2, 0)] = 1.0;
        g[(1, 3)] = 1.0;
        g[(3, 1)] = 1.0;
        let ginv = g.clone();
        let mut r = Dense4::zeros(4);
        for (a, b, c, d, v) in [
            (0, 1, 1, 0, 1.0),
            (1, 0, 0, 1, 1.0),
            (0, 1, 0, 1, -1.0),
            (1, 0, 1, 0, -1.0),
        ] {
            r.set(a, b, c, d, v);
        }
        (g, ginv, r)
    }

    #[test]
    fn model_jacobi_action() {
        let (g, ginv, r) = model_u0();
        // xi = X + Xt/2 has g(xi,xi) = 1
        let xi = vec![1.0, 0.0, 0.5, 0.0];
        assert!((quadratic_form(&g, &xi, &xi) - 1.0).abs() < 1e-15);
        let j = jacobi_operator_from(&g, &ginv, &r, &xi).unwrap();
        // J(xi) Y = Yt
        let y = DVector::from_column_slice(&[0.0, 1.0, 0.0, 0.0]);
        let img = &j * y;
        assert_eq!(img.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        // J(xi) xi = 0, rank 1, square 0
        let jxi = &j * DVector::from_column_slice(&xi);
        assert!(jxi.amax() < 1e-15);
        assert_eq!(jordan_profile(&j).unwrap().ranks, vec![1, 0]);
        assert!((&j * &j).amax() < 1e-15);
    }

    #[test]
    fn null_vector_rejected() {
        let (g, ginv, r) = model_u0();
        let xt = vec![0.0, 0.0, 1.0, 0.0];
        assert!(matches!(
            jacobi_operator_from(&g, &ginv, &r, &xt),
            Err(OperatorError::NearNull(_))
        ));
        let spec = MetricSpec::profile(y2());
        assert!(matches!(
            jacobi_operator(&spec, &ChartPoint::origin(2), &[0.0, 0.0, 1.0, 0.0]),
            Err(OperatorError::NearNull(_))
        ));
    }

    #[test]
    fn model_skew_operator() {
        let (g, ginv, r) = model_u0();
        let e1 = vec![1.0, 0.0, 0.5, 0.0]; // X + Xt/2
        let e2 = vec![0.0, 1.0, 0.0, 0.5]; // Y + Yt/2
        let plane = OrientedPlane::new(&g, e1.clone(), e2.clone()).unwrap();
        assert_eq!(plane.sign, 1.0);
        let m = skew_curvature_operator_from(&ginv, &r, &plane);
        assert_eq!(jordan_profile(&m).unwrap().ranks, vec![2, 0]);
        assert!((&m * &m).amax() < 1e-15);
        // orientation flip negates
        let flipped = OrientedPlane::new(&g, e2, e1).unwrap();
        let mf = skew_curvature_operator_from(&ginv, &r, &flipped);
        assert!((m + mf).amax() < 1e-15);
    }

    #[test]
    fn isotropic_plane_rejected() {
        let (g, _, _) = model_u0();
        // span{Xt, Yt} is totally isotropic
        let err = OrientedPlane::new(
            &g,
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        );
        assert!(matches!(err, Err(OperatorError::DegeneratePlane(_))));
        // mixed-signature plane also rejected
        let spec = MetricSpec::profile(y2());
        let point = ChartPoint::xy(0.0, 1.0, 0.0, 0.0);
        let gm = metric_at(&spec, &point).unwrap();
        let u = vec![1.0, 0.0, 1.5, 0.0]; // g(u,u) = -2 + 3 = 1
        let v = vec![1.0, 0.0, 0.5, 0.0]; // g(v,v) = -2 + 1 = -1
        assert!((quadratic_form(&gm, &u, &u) - 1.0).abs() < 1e-14);
        assert!((quadratic_form(&gm, &v, &v) + 1.0).abs() < 1e-14);
        // not orthogonal, and mixed: must be rejected either way
        assert!(OrientedPlane::new(&gm, u, v).is_err());
    }

    #[test]
    fn jordan_profile_basics() {
        assert!(jordan_profile(&DMatrix::zeros(4, 4)).unwrap().is_zero());
        let mut two_block = DMatrix::zeros(4, 4);
        two_block[(0, 1)] = 3.0;
        assert_eq!(jordan_profile(&two_block).unwrap().ranks, vec![1, 0]);
        assert!(matches!(
            jordan_profile(&DMatrix::identity(4, 4)),
            Err(OperatorError::NotNilpotent)
        ));
        // two 2-blocks
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 1)] = 1.0;
        m[(2, 3)] = -2.0;
        assert_eq!(jordan_profile(&m).unwrap().ranks, vec![2, 0]);
        // one 3-block
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 1)] = 1.0;
        m[(1, 2)] = 1.0;
        assert_eq!(jordan_profile(&m).unwrap().ranks, vec![2, 1, 0]);
    }

    #[test]
    fn manifold_jacobi_profile_and_adjointness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for f in [y2(), SF::exp_sum(&[(1.0, 1.0), (1.0, 2.0)])] {
            let spec = MetricSpec::profile(f);
            for _ in 0..20 {
                let point = sample_point(&spec, &mut rng).unwrap();
                let g = metric_at(&spec, &point).unwrap();
                let Some((xi, _)) = sample_unit_vector(&g, &mut rng) else {
                    continue;
                };
                let j = jacobi_operator(&spec, &point, &xi).unwrap();
                assert_eq!(jordan_profile(&j).unwrap().ranks, vec![1, 0]);
                // J(xi) xi = 0 and J^2 = 0
                let jxi = &j * DVector::from_column_slice(&xi);
                assert!(jxi.amax() < 1e-9);
                assert!((&j * &j).amax() < 1e-9);
                // g-self-adjoint: g J symmetric
                let gj = &g * &j;
                assert!((&gj - gj.transpose()).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn manifold_skew_profile_and_adjointness() {
        let spec = MetricSpec::profile(SF::poly(&[0.0, 0.0, 0.0, 0.0, 1.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let point = sample_point(&spec, &mut rng).unwrap();
            let g = metric_at(&spec, &point).unwrap();
            let ginv = inverse_metric_at(&spec, &point).unwrap();
            let Some(plane) = sample_plane(&g, &mut rng, true) else {
                continue;
            };
            let r = curvature(&spec, &point, 0).unwrap().to_dense4();
            let m = skew_curvature_operator_from(&ginv, &r, &plane);
            assert_eq!(jordan_profile(&m).unwrap().ranks, vec![2, 0]);
            assert!((&m * &m).amax() < 1e-9);
            // g-skew-adjoint: g M antisymmetric
            let gm = &g * &m;
            assert!((&gm + gm.transpose()).amax() < 1e-10);
        }
    }

    #[test]
    fn osserman_reports_uniform_profile() {
        for f in [y2(), SF::exp_sum(&[(1.0, 1.0), (1.0, 2.0)])] {
            let spec = MetricSpec::profile(f);
            let report = verify_osserman(&spec, 200, 42).unwrap();
            assert!(report.pass);
            assert_eq!(report.spacelike_profile.unwrap().ranks, vec![1, 0]);
            assert_eq!(report.timelike_profile.unwrap().ranks, vec![1, 0]);
        }
        // flat: zero operator, empty profile
        let report = verify_osserman(&MetricSpec::profile(SF::zero()), 50, 42).unwrap();
        assert!(report.pass);
        assert!(report.spacelike_profile.unwrap().is_zero());
        assert!(report.timelike_profile.unwrap().is_zero());
    }

    #[test]
    fn ivanov_petrova_reports_uniform_profile() {
        let spec = MetricSpec::profile(SF::poly(&[0.0, 0.0, 0.0, 0.0, 1.0]));
        let report = verify_ivanov_petrova(&spec, 200, 42).unwrap();
        assert!(report.pass, "{:?}", report.counterexample);
        assert_eq!(report.spacelike_profile.unwrap().ranks, vec![2, 0]);
        assert_eq!(report.timelike_profile.unwrap().ranks, vec![2, 0]);
        // affine profile: zero operator everywhere
        let spec = MetricSpec::profile(SF::poly(&[4.0, 3.0]));
        let report = verify_ivanov_petrova(&spec, 50, 42).unwrap();
        assert!(report.pass);
        assert!(report.spacelike_profile.unwrap().is_zero());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let spec = MetricSpec::profile(y2());
        let a = verify_osserman(&spec, 50, 7).unwrap();
        let b = verify_osserman(&spec, 50, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
