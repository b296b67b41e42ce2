mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use theta_forge::boosted::BoostedError;
use theta_forge::cones::{build_a4_example, build_lattice_r1_example, build_r1_example, check_cone_pair, ConePair};
use theta_forge::errfn::{eval, eval_e_oracle_mc};
use theta_forge::theta::{eval_theta, q_expansion_scaled, ThetaError, THREADS_ENV};
use theta_forge::verify::{run_suite, Level};
use theta_forge::{ErrFnArgument, ErrFnError, ErrorFunctionFrame, Kind, QuadratureSpec};

use config::JobConfig;

pub const EXIT_CONE_FAIL: u8 = 1;
pub const EXIT_WALL: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_BUDGET: u8 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    code: u8,
    kind: &'static str,
    message: String,
    partial: Option<Value>,
}

impl CliError {
    fn validation(message: String) -> Self {
        Self { code: EXIT_VALIDATION, kind: "validation", message, partial: None }
    }
}

impl From<ErrFnError> for CliError {
    fn from(e: ErrFnError) -> Self {
        match e {
            ErrFnError::WallTooClose { .. } => Self { code: EXIT_WALL, kind: "wall_too_close", message: e.to_string(), partial: None },
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<ThetaError> for CliError {
    fn from(e: ThetaError) -> Self {
        let message = e.to_string();
        match e {
            ThetaError::Budget { partial, .. } => {
                Self { code: EXIT_BUDGET, kind: "budget", message, partial: Some(to_value(&partial)) }
            }
            ThetaError::ExpansionBudget { found, cutoff } => {
                Self { code: EXIT_BUDGET, kind: "budget", message, partial: Some(json!({ "found": found, "cutoff": cutoff })) }
            }
            ThetaError::ConeCheckFailed(_) => Self { code: EXIT_CONE_FAIL, kind: "cone_check_failed", message, partial: None },
            ThetaError::Boosted(BoostedError::ErrFn(inner)) => inner.into(),
            _ => Self::validation(message),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "theta-forge", version, about = "Generalized error functions and indefinite theta series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate M_r or E_r at a point.
    Errfn(ErrfnArgs),
    /// Check the convergence conditions of a cone pair.
    Cones(ConesArgs),
    /// Evaluate a theta series or its q-expansion.
    Theta(ThetaArgs),
    /// Run the identity verification suite.
    Verify(VerifyArgs),
}

#[derive(clap::Args, Debug)]
struct ErrfnArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// `I<r>`, an inline JSON list of columns, or a file holding one.
    #[arg(long)]
    frame: String,
    /// Comma separated coordinates of u.
    #[arg(long, allow_hyphen_values = true)]
    u: String,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, requires = "seed")]
    mc_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KindArg {
    #[value(name = "M")]
    M,
    #[value(name = "E")]
    E,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Builtin {
    A4,
    R1,
    LatticeR1,
}

#[derive(clap::Args, Debug)]
struct ConesArgs {
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Value,
    Qexp,
}

#[derive(clap::Args, Debug)]
struct ThetaArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "value")]
    mode: Mode,
    #[arg(long, default_value_t = 10)]
    terms: usize,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(clap::Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "fast")]
    level: LevelArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn parse_frame(spec: &str) -> Result<ErrorFunctionFrame, CliError> {
    let spec = spec.trim();
    if let Some(r) = spec.strip_prefix('I').and_then(|r| r.parse::<usize>().ok()) {
        if r == 0 {
            return Err(CliError::validation("frame I0 has rank zero".into()));
        }
        return Ok(ErrorFunctionFrame::identity(r));
    }
    let text = if spec.starts_with('[') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec).map_err(|e| CliError::validation(format!("cannot read frame file {spec}: {e}")))?
    };
    let cols: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("frame must be a JSON list of columns: {e}")))?;
    let r = cols.len();
    if r == 0 || cols.iter().any(|c| c.len() != r) {
        return Err(CliError::validation(format!("frame must be {r} columns of length {r}")));
    }
    ErrorFunctionFrame::from_columns(&cols).map_err(|e| CliError::validation(format!("frame: {e}")))
}

fn parse_point(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| CliError::validation(format!("bad coordinate {t:?} in --u"))))
        .collect()
}

fn cmd_errfn(args: &ErrfnArgs) -> Result<(Value, u8), CliError> {
    let frame = parse_frame(&args.frame)?;
    let u = parse_point(&args.u)?;
    let quad = match args.nodes {
        Some(n) => QuadratureSpec::with_nodes(n),
        None => QuadratureSpec::default(),
    };
    quad.validate()?;
    let arg = ErrFnArgument::new(frame, &u)?;
    let kind = match args.kind {
        KindArg::M => Kind::M,
        KindArg::E => Kind::E,
    };
    let v = eval(kind, &arg, &quad)?;
    let mut doc = json!({
        "command": "errfn",
        "kind": kind,
        "u": u,
        "value": v.value,
        "est_error": v.est_error,
        "imag_residual": v.imag_residual,
    });
    if let Some(n) = args.mc_samples {
        if !matches!(kind, Kind::E) {
            return Err(CliError::validation("--mc-samples applies to --kind E only".into()));
        }
        let mc = eval_e_oracle_mc(&arg, n, args.seed.unwrap_or(0))?;
        doc["mc"] = to_value(&mc);
    }
    Ok((doc, 0))
}

fn cmd_cones(args: &ConesArgs) -> Result<(Value, u8), CliError> {
    let pair: ConePair = match (&args.config, args.builtin) {
        (_, Some(Builtin::A4)) => build_a4_example(),
        (_, Some(Builtin::R1)) => build_r1_example(),
        (_, Some(Builtin::LatticeR1)) => build_lattice_r1_example(),
        (Some(path), None) => JobConfig::load(path)?.cone_pair()?,
        (None, None) => return Err(CliError::validation("one of --config or --builtin is required".into())),
    };
    let report = check_cone_pair(&pair);
    let code = if report.passes() { 0 } else { EXIT_CONE_FAIL };
    eprintln!("cone pair: {}", if report.passes() { "pass".into() } else { format!("fail at {}", report.verdict.first_failed.clone().unwrap_or_default()) });
    Ok((json!({ "command": "cones", "report": to_value(&report) }), code))
}

/// Radius scale for the q-expansion as the tolerance tightens below the default.
fn qexp_scale(tol: f64) -> f64 {
    (tol.ln() / 1e-8f64.ln()).sqrt().max(1.0)
}

fn cmd_theta(args: &ThetaArgs) -> Result<(Value, u8), CliError> {
    let cfg = JobConfig::load(&args.config)?;
    let spec = cfg.theta_spec()?;
    let mut policy = cfg.policy();
    if let Some(t) = args.tol {
        policy.tol = t;
    }
    policy.validate()?;
    spec.validate()?;
    match args.mode {
        Mode::Value => {
            let v = eval_theta(&spec, &policy)?;
            eprintln!("theta = {} ({} points, radius {})", v.value, v.n_points, v.radius);
            Ok((json!({ "command": "theta", "mode": "value", "kernel": spec.kernel.name(), "partial": false, "result": to_value(&v) }), 0))
        }
        Mode::Qexp => {
            let q = q_expansion_scaled(&spec, args.terms, policy.max_points, qexp_scale(policy.tol))?;
            eprintln!("{} q-expansion terms from {} points", q.terms.len(), q.n_points);
            Ok((json!({ "command": "theta", "mode": "qexp", "kernel": spec.kernel.name(), "partial": false, "result": to_value(&q) }), 0))
        }
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<(Value, u8), CliError> {
    let level = match args.level {
        LevelArg::Fast => Level::Fast,
        LevelArg::Full => Level::Full,
    };
    let reports = run_suite(level, args.seed);
    let all_pass = reports.iter().all(|r| r.pass);
    for r in &reports {
        eprintln!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
    }
    let doc = json!({ "command": "verify", "level": level, "seed": args.seed, "all_pass": all_pass, "reports": to_value(&reports) });
    Ok((doc, if all_pass { 0 } else { 1 }))
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0) {
        // only fails if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn emit(doc: &Value) {
    println!("{}", serde_json::to_string_pretty(doc).expect("json values serialize"));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Errfn(a) => cmd_errfn(a),
        Command::Cones(a) => cmd_cones(a),
        Command::Theta(a) => cmd_theta(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok((doc, code)) => {
            emit(&doc);
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut doc = json!({ "error": { "kind": e.kind, "message": e.message } });
            if let Some(p) = e.partial {
                doc["partial"] = json!(true);
                doc["result"] = p;
            }
            emit(&doc);
            ExitCode::from(e.code)
        }
    }
}
