//! Command-line front door: parse the function DSL, dispatch to the library,
//! and emit deterministic JSON reports suitable for CI.
//!
//! Exit codes: 0 when the report passes, 1 on a property failure (the report
//! carries a counterexample payload), 2 on a parse error (the message is
//! position-annotated).

use std::collections::BTreeMap;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::geodesics::{geodesic_at, rk4_oracle, speed_squared, GeodesicSpec};
use crate::geometry::{curvature, ChartPoint, MetricSpec};
use crate::killing::{
    catalog, default_grid, express_in_span, killing_dimension, killing_residual_ctx, lie_bracket,
    ProfileContext,
};
use crate::models::{build_isometry, classify, ClassKind, IsometryOutcome};
use crate::operators::{verify_ivanov_petrova, verify_osserman, RANK_TOL, TAU_NULL};
use crate::smoothfn::{FnError, SmoothFunction};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_PARSE: i32 = 2;

/// The versioned report emitted on standard output. Field order is fixed and
/// all maps are ordered, so identical invocations serialize byte-identically.
#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub inputs_echo: BTreeMap<String, String>,
    pub tolerances: BTreeMap<String, f64>,
    pub seed: u64,
    pub results: Value,
    pub pass: bool,
}

#[derive(Debug, Parser)]
#[command(name = "gpw", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Pretty-print the JSON report.
    #[arg(long, global = true)]
    pretty: bool,
    /// Also write the report to a file.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Classify the profile and report the Killing algebra dimension.
    Classify(ClassifyArgs),
    /// Evaluate the derivative tower of the curvature tensor at a point.
    Curvature(CurvatureArgs),
    /// Evaluate a geodesic in closed form, optionally against the RK4 oracle.
    Geodesic(GeodesicArgs),
    /// Verify an operator spectral property over seeded random samples.
    Verify(VerifyArgs),
    /// Report the Killing field catalog, residuals and bracket table.
    Killing(KillingArgs),
    /// Build (or refute) an isometry between two pointed metrics.
    Isometry(IsometryArgs),
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    metric: String,
    /// Open interval a,b to classify over.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct CurvatureArgs {
    #[arg(long)]
    metric: String,
    /// Chart point x,y,xt,yt (defaults to the origin).
    #[arg(long)]
    point: Option<String>,
    /// Number of covariant derivatives.
    #[arg(long, default_value_t = 0)]
    order: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct GeodesicArgs {
    #[arg(long)]
    metric: String,
    #[arg(long)]
    start: String,
    #[arg(long)]
    velocity: String,
    #[arg(long)]
    t: f64,
    /// Cross-check the closed form against RK4 integration.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    /// Write the sampled trajectory as CSV.
    #[arg(long, value_name = "FILE")]
    dump_trajectory: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    metric: String,
    /// One of: osserman, ip.
    #[arg(long)]
    property: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct KillingArgs {
    #[arg(long)]
    metric: String,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct IsometryArgs {
    /// Source metric and base point, as DSL@x,y,xt,yt.
    #[arg(long)]
    from: String,
    /// Target metric and base point, as DSL@x,y,xt,yt.
    #[arg(long)]
    to: String,
    /// Invariant comparison horizon.
    #[arg(long, default_value_t = 8, value_name = "K")]
    k: usize,
    #[arg(long)]
    json: bool,
}

/// Run the CLI on the given argument vector; returns the serialized report
/// and the process exit code. The report is also written to `--out` when
/// requested.
pub fn run<I, S>(argv: I) -> (String, i32)
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // argument-level errors: let clap render, exit 2; help and
            // version requests are not errors
            use clap::error::ErrorKind::*;
            let code = match e.kind() {
                DisplayHelp | DisplayVersion => EXIT_PASS,
                _ => EXIT_PARSE,
            };
            return (e.to_string(), code);
        }
    };

    let seed = resolve_seed(&cli.cmd);
    let (report, code) = match dispatch(&cli.cmd, seed) {
        Ok(pair) => pair,
        Err(failure) => failure.into_report(command_name(&cli.cmd), seed),
    };

    let body = if cli.pretty {
        serde_json::to_string_pretty(&report).expect("report serializes")
    } else {
        serde_json::to_string(&report).expect("report serializes")
    };
    if let Some(path) = &cli.out {
        if let Err(e) = std::fs::write(path, &body) {
            eprintln!("failed to write {path}: {e}");
        }
    }
    (body, code)
}

fn command_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Classify(_) => "classify",
        Cmd::Curvature(_) => "curvature",
        Cmd::Geodesic(_) => "geodesic",
        Cmd::Verify(_) => "verify",
        Cmd::Killing(_) => "killing",
        Cmd::Isometry(_) => "isometry",
    }
}

fn resolve_seed(cmd: &Cmd) -> u64 {
    // explicit flag > GPW_SEED > default 0
    if let Cmd::Verify(v) = cmd {
        if let Some(s) = v.seed {
            return s;
        }
    }
    std::env::var("GPW_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

/// A failed run that still produces a report.
struct Failure {
    code: i32,
    results: Value,
}

impl Failure {
    fn parse(msg: String) -> Self {
        Failure {
            code: EXIT_PARSE,
            results: json!({ "error": msg }),
        }
    }

    fn property(results: Value) -> Self {
        Failure {
            code: EXIT_FAIL,
            results,
        }
    }

    fn into_report(self, command: &str, seed: u64) -> (Report, i32) {
        (
            Report {
                schema: 1,
                command: command.to_string(),
                inputs_echo: BTreeMap::new(),
                tolerances: BTreeMap::new(),
                seed,
                results: self.results,
                pass: false,
            },
            self.code,
        )
    }
}

impl From<FnError> for Failure {
    fn from(e: FnError) -> Self {
        match e {
            FnError::Parse { .. } => Failure::parse(e.to_string()),
            other => Failure::property(json!({ "error": other.to_string() })),
        }
    }
}

macro_rules! failure_from_error {
    ($ty:ty) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::property(json!({ "error": e.to_string() }))
            }
        }
    };
}
failure_from_error!(crate::geometry::GeometryError);
failure_from_error!(crate::models::ModelError);
failure_from_error!(crate::operators::OperatorError);
failure_from_error!(crate::killing::KillingError);

fn parse_coords(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| Failure::parse(format!("invalid {what} '{s}': {e}")))
}

fn parse_point(s: &str) -> Result<ChartPoint, Failure> {
    let c = parse_coords(s, "point")?;
    if c.len() % 2 != 0 || c.is_empty() {
        return Err(Failure::parse(format!(
            "point '{s}' must have an even number of coordinates"
        )));
    }
    Ok(ChartPoint::from_coords(&c))
}

fn dispatch(cmd: &Cmd, seed: u64) -> Result<(Report, i32), Failure> {
    let mut report = Report {
        schema: 1,
        command: command_name(cmd).to_string(),
        inputs_echo: BTreeMap::new(),
        tolerances: BTreeMap::new(),
        seed,
        results: Value::Null,
        pass: true,
    };
    match cmd {
        Cmd::Classify(a) => run_classify(a, &mut report)?,
        Cmd::Curvature(a) => run_curvature(a, &mut report)?,
        Cmd::Geodesic(a) => run_geodesic(a, &mut report)?,
        Cmd::Verify(a) => run_verify(a, &mut report)?,
        Cmd::Killing(a) => run_killing(a, &mut report)?,
        Cmd::Isometry(a) => run_isometry(a, &mut report)?,
    }
    let code = if report.pass { EXIT_PASS } else { EXIT_FAIL };
    Ok((report, code))
}

fn run_classify(a: &ClassifyArgs, report: &mut Report) -> Result<(), Failure> {
    let f = SmoothFunction::parse(&a.metric)?;
    report
        .inputs_echo
        .insert("metric".into(), f.to_string());
    let domain = match &a.domain {
        Some(d) => {
            let v = parse_coords(d, "domain")?;
            if v.len() != 2 {
                return Err(Failure::parse(format!("domain '{d}' must be a,b")));
            }
            report.inputs_echo.insert("domain".into(), format!("{},{}", v[0], v[1]));
            Some((v[0], v[1]))
        }
        None => None,
    };
    let classification = classify(&f, domain)?;
    let dim = killing_dimension(&f)?;
    let (class, params) = class_payload(&classification.kind);
    report.results = json!({
        "class": class,
        "params": params,
        "witness": classification.witness,
        "dim_killing": dim,
    });
    Ok(())
}

fn class_payload(kind: &ClassKind) -> (&'static str, Value) {
    match kind {
        ClassKind::Flat => ("Flat", Value::Null),
        ClassKind::SymmetricNonFlat => ("SymmetricNonFlat", Value::Null),
        ClassKind::Homogeneous { a, lambda } => {
            ("Homogeneous", json!({ "a": a, "lambda": lambda }))
        }
        ClassKind::LocallyHomogeneousPower { a, b, c } => (
            "LocallyHomogeneousPower",
            json!({ "a": a, "b": b, "c": c }),
        ),
        ClassKind::OneCurvHomogOnly => ("OneCurvHomogOnly", Value::Null),
        ClassKind::Generic => ("Generic", Value::Null),
    }
}

fn index_name(i: usize, p: usize) -> String {
    if p == 2 {
        ["dx", "dy", "dxt", "dyt"][i].to_string()
    } else if i < p {
        format!("dx{}", i + 1)
    } else {
        format!("dxt{}", i - p + 1)
    }
}

fn run_curvature(a: &CurvatureArgs, report: &mut Report) -> Result<(), Failure> {
    let f = SmoothFunction::parse(&a.metric)?;
    let spec = MetricSpec::profile(f.clone());
    let point = match &a.point {
        Some(s) => parse_point(s)?,
        None => ChartPoint::origin(spec.p()),
    };
    report.inputs_echo.insert("metric".into(), f.to_string());
    report.inputs_echo.insert(
        "point".into(),
        point
            .coords()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    report
        .inputs_echo
        .insert("order".into(), a.order.to_string());

    let table = curvature(&spec, &point, a.order)?;
    let p = spec.p();
    let mut components = Vec::new();
    for (key, value) in table.iter() {
        let names: Vec<String> = key.r.iter().map(|&i| index_name(i as usize, p)).collect();
        let ds: Vec<String> = key.d.iter().map(|&i| index_name(i as usize, p)).collect();
        let label = if ds.is_empty() {
            format!("R({})", names.join(","))
        } else {
            format!("R({};{})", names.join(","), ds.join(","))
        };
        components.push(json!({ "indices": label, "value": value }));
    }
    report.results = json!({
        "order": a.order,
        "nonzero_components": components,
        "count": table.len(),
        "max_abs": table.max_abs(),
    });
    Ok(())
}

fn run_geodesic(a: &GeodesicArgs, report: &mut Report) -> Result<(), Failure> {
    let f = SmoothFunction::parse(&a.metric)?;
    let spec = MetricSpec::profile(f.clone());
    let start = parse_point(&a.start)?;
    let velocity = parse_coords(&a.velocity, "velocity")?;
    if velocity.len() != spec.dim() {
        return Err(Failure::parse(format!(
            "velocity must have {} components",
            spec.dim()
        )));
    }
    report.inputs_echo.insert("metric".into(), f.to_string());
    report.inputs_echo.insert("start".into(), a.start.clone());
    report
        .inputs_echo
        .insert("velocity".into(), a.velocity.clone());
    report.inputs_echo.insert("t".into(), a.t.to_string());
    let oracle_tol = 1e-6;
    report.tolerances.insert("oracle".into(), oracle_tol);

    let gspec = GeodesicSpec::new(start.clone(), velocity.clone());
    let end = geodesic_at(&spec, &gspec, a.t)?;
    let mut results = json!({
        "point": end.coords(),
        "speed_squared": speed_squared(&spec, &start, &velocity)?,
    });

    if a.oracle {
        let oracle_end = rk4_oracle(&spec, &gspec, a.t, a.steps)?;
        let dev = end
            .coords()
            .iter()
            .zip(oracle_end.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        results["oracle_point"] = json!(oracle_end.coords());
        results["oracle_deviation"] = json!(dev);
        report.pass = dev <= oracle_tol;
        if !report.pass {
            results["counterexample"] = json!({
                "start": start.coords(),
                "velocity": velocity,
                "t": a.t,
            });
        }
    }

    if let Some(path) = &a.dump_trajectory {
        let mut csv = String::from("t,x,y,xt,yt\n");
        let n = 100;
        for i in 0..=n {
            let ti = a.t * i as f64 / n as f64;
            let q = geodesic_at(&spec, &gspec, ti)?;
            let c = q.coords();
            csv.push_str(&format!("{ti},{},{},{},{}\n", c[0], c[1], c[2], c[3]));
        }
        if let Err(e) = std::fs::write(path, csv) {
            return Err(Failure::property(json!({
                "error": format!("failed to write {path}: {e}")
            })));
        }
    }

    report.results = results;
    Ok(())
}

fn run_verify(a: &VerifyArgs, report: &mut Report) -> Result<(), Failure> {
    let f = SmoothFunction::parse(&a.metric)?;
    let spec = MetricSpec::profile(f.clone());
    report.inputs_echo.insert("metric".into(), f.to_string());
    report
        .inputs_echo
        .insert("property".into(), a.property.clone());
    report
        .inputs_echo
        .insert("samples".into(), a.samples.to_string());
    report.tolerances.insert("null_pairing".into(), TAU_NULL);
    report.tolerances.insert("rank".into(), RANK_TOL);

    let vr = match a.property.as_str() {
        "osserman" => verify_osserman(&spec, a.samples, report.seed)?,
        "ip" => verify_ivanov_petrova(&spec, a.samples, report.seed)?,
        other => {
            return Err(Failure::parse(format!(
                "unknown property '{other}' (expected osserman or ip)"
            )))
        }
    };
    report.pass = vr.pass;
    report.results = serde_json::to_value(&vr).expect("verify report serializes");
    Ok(())
}

fn run_killing(a: &KillingArgs, report: &mut Report) -> Result<(), Failure> {
    let f = SmoothFunction::parse(&a.metric)?;
    report.inputs_echo.insert("metric".into(), f.to_string());
    let residual_tol = 1e-10;
    let bracket_tol = 1e-9;
    report.tolerances.insert("residual".into(), residual_tol);
    report.tolerances.insert("bracket_span".into(), bracket_tol);

    let classification = classify(&f, None)?;
    let dim = killing_dimension(&f)?;
    let fields = catalog(&f, &classification)?;
    let ctx = ProfileContext::new(&f);
    let grid = default_grid(&f, 100);

    let mut field_entries = Vec::new();
    for cf in &fields {
        let mut max_res = 0.0f64;
        for p in &grid {
            max_res = max_res.max(killing_residual_ctx(&ctx, &cf.field, p)?.amax());
        }
        if max_res > residual_tol {
            report.pass = false;
        }
        field_entries.push(json!({
            "name": cf.name,
            "field": cf.field.to_string(),
            "residual_max": max_res,
        }));
    }

    let span_grid = &grid[..grid.len().min(12)];
    let mut brackets = Vec::new();
    for (i, a_f) in fields.iter().enumerate() {
        for (j, b_f) in fields.iter().enumerate().skip(i + 1) {
            let br = lie_bracket(&a_f.field, &b_f.field);
            let (coeffs, residual) = express_in_span(&f, &fields, &br, span_grid)?;
            if residual > bracket_tol {
                report.pass = false;
            }
            brackets.push(json!({
                "i": i,
                "j": j,
                "coefficients": coeffs,
                "span_residual": residual,
            }));
        }
    }

    let (class, params) = class_payload(&classification.kind);
    report.results = json!({
        "class": class,
        "params": params,
        "dimension": dim,
        "fields": field_entries,
        "brackets": brackets,
    });
    Ok(())
}

fn parse_pointed_metric(s: &str, what: &str) -> Result<(SmoothFunction, ChartPoint), Failure> {
    // the DSL itself may contain '@' (exponential terms), the point cannot
    let Some((dsl, point)) = s.rsplit_once('@') else {
        return Err(Failure::parse(format!(
            "{what} must be DSL@x,y,xt,yt, got '{s}'"
        )));
    };
    let f = SmoothFunction::parse(dsl)?;
    let p = parse_point(point)?;
    Ok((f, p))
}

fn run_isometry(a: &IsometryArgs, report: &mut Report) -> Result<(), Failure> {
    let (f1, p1) = parse_pointed_metric(&a.from, "--from")?;
    let (f2, p2) = parse_pointed_metric(&a.to, "--to")?;
    report.inputs_echo.insert(
        "from".into(),
        format!("{}@{}", f1, p1.coords().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
    );
    report.inputs_echo.insert(
        "to".into(),
        format!("{}@{}", f2, p2.coords().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
    );
    report.inputs_echo.insert("K".into(), a.k.to_string());
    let pullback_tol = 1e-6;
    report.tolerances.insert("pullback".into(), pullback_tol);

    match build_isometry(&f1, &p1, &f2, &p2, a.k)? {
        IsometryOutcome::Isometry(ir) => {
            report.pass = ir.max_residual <= pullback_tol;
            report.results = json!({
                "outcome": "isometry",
                "frame_map": ir.frame_map,
                "grid_points": ir.grid_points,
                "max_residual": ir.max_residual,
            });
        }
        IsometryOutcome::Mismatch { p, alpha1, alpha2 } => {
            report.pass = false;
            report.results = json!({
                "outcome": "mismatch",
                "counterexample": { "p": p, "alpha1": alpha1, "alpha2": alpha2 },
            });
        }
    }
    Ok(())
}
