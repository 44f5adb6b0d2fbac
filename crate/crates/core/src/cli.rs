//! Command line entry point: validation, tables, simulation, coupling soaks,
//! estimators, exact checks and full experiment runs.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::equilibrium::{self, convexity_certificate};
use crate::estimators::{
    coupling_soak, run_currents, write_report, CheckRow, EstimatorError, ExperimentConfig, ResolvedModel, Session,
    CHECKS,
};
use crate::models::{bl_pairing_check, validate_monotonicity, validate_product_rule, validate_sum_rule, Family};
use crate::oracle::{adjoint_check_seeded, stationarity_residual, DEFAULT_CAP};
use crate::rng::derive_seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Config(_) | EstimatorError::Model(_) | EstimatorError::Equilibrium(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "deposim", version, about = "Deposition model simulator and verifier")]
pub struct Cli {
    /// Worker threads for replica fan-out.
    #[arg(long, global = true, env = "DEPOSIM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check monotonicity, the sum rule and the product rule of a model.
    Validate {
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = crate::models::DEFAULT_HALF_WIDTH)]
        half_width: i64,
    },
    /// Equilibrium quantities on a θ grid.
    Table {
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        theta_min: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        theta_max: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-replica currents J^(V)(t).
    Simulate {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Long basic-coupling soak checking order and discrepancy conservation.
    Couple {
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 1_000_000)]
        events: u64,
    },
    /// Run one or more estimator checks.
    Estimate {
        /// Comma separated check names.
        #[arg(long, value_delimiter = ',')]
        check: Vec<String>,
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Exact stationarity and adjoint checks on a small ring.
    Oracle {
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: i64,
    },
    /// Run the checks listed in a config file or preset.
    Run {
        /// Config path, manifest path or preset name.
        config: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        strict: bool,
        /// Also write per-figure CSV files.
        #[arg(long)]
        plotdata: bool,
    },
}

/// Built-in experiment configs.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "preset-se-theorem13",
        r#"{"family":"SE","rho":0.3,"L":512,"t":[100,200],"V":[0,0.4],"replicas":5000,"seed":13,"checks":["lln","variance","clt","slant"],"rel_tol":0.12}"#,
    ),
    (
        "preset-se-defect",
        r#"{"family":"SE","rho":0.3,"L":512,"t":[50,100,200],"replicas":2000,"seed":3,"checks":["qspeed"]}"#,
    ),
    (
        "preset-bl-defect",
        r#"{"family":"BL","beta":0.5,"theta":0,"L":512,"t":[50,100,200],"replicas":2000,"seed":3,"checks":["qspeed"]}"#,
    ),
    (
        "preset-zr-defect",
        r#"{"family":"ZR","theta":0,"L":512,"t":[50,100,200],"replicas":2000,"seed":3,"checks":["qspeed"]}"#,
    ),
    (
        "preset-se-oracle",
        r#"{"family":"SE","rho":0.3,"L":6,"t":[0.5,1],"n":[0,1],"n_max":0,"replicas":200000,"seed":7,"oracle":true,"checks":["corr"]}"#,
    ),
    (
        "preset-se-cor32",
        r#"{"family":"SE","rho":0.5,"L":64,"t":[4],"n":[-2,-1,0,1,2],"replicas":20000,"seed":32,"checks":["cor32"]}"#,
    ),
    (
        "preset-se-decomp",
        r#"{"family":"SE","rho":0.3,"L":128,"t":[5],"n_max":20,"replicas":20000,"seed":22,"checks":["decomp"]}"#,
    ),
    (
        "preset-bl-sspeed",
        r#"{"family":"BL","beta":0.5,"theta1":0,"theta2":0.5,"L":512,"t":[50,100],"replicas":2000,"seed":48,"checks":["sspeed"]}"#,
    ),
    (
        "preset-bl-sandwich",
        r#"{"family":"BL","beta":0.5,"theta":0,"theta1":-0.5,"theta2":0.5,"L":256,"t":[10,20],"replicas":1000,"seed":5,"checks":["sandwich"]}"#,
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Reads a config from a preset name, a config file or a run manifest.
pub fn load_config(arg: &str) -> Result<ExperimentConfig, CliError> {
    if let Some(text) = preset(arg) {
        return Ok(ExperimentConfig::from_json_str(text)?);
    }
    if arg.starts_with("preset-") {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        return Err(CliError::Config(format!("unknown preset '{arg}'; available: {}", names.join(", "))));
    }
    let path = Path::new(arg);
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("{arg}: malformed JSON at line {} column {}: {e}", e.line(), e.column()))
    })?;
    let value = match value {
        Value::Object(mut m) if m.contains_key("version") && m.contains_key("config") => m.remove("config").unwrap(),
        v => v,
    };
    ExperimentConfig::from_value(value).map_err(|e| CliError::Config(format!("{arg}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub check: String,
    pub param_json: String,
    pub pass: Option<bool>,
    /// Whether this row decides the exit code.
    pub gating: bool,
}

/// Record of one `run`: enough to reproduce its CSV outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: Value,
    pub seed: u64,
    pub version: String,
    pub outcomes: Vec<Outcome>,
    pub wall_clock_seconds: f64,
}

fn gating(row: &CheckRow, strict: bool) -> bool {
    row.pass.is_some() && (row.exact || strict)
}

/// Exit code for a set of rows: 1 when any gating row failed.
pub fn outcome_code(rows: &[CheckRow], strict: bool) -> i32 {
    if rows.iter().any(|r| gating(r, strict) && r.failed()) {
        1
    } else {
        0
    }
}

fn write_rows(rows: &[CheckRow], path: &Path) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_report(rows, std::io::BufWriter::new(file)).map_err(io_err(path))
}

fn param(row: &CheckRow, key: &str) -> f64 {
    serde_json::from_str::<Value>(&row.param_json).ok().and_then(|v| v[key].as_f64()).unwrap_or(f64::NAN)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes variance_vs_V.csv, q_convergence.csv and ks_curves.csv for the
/// rows that feed them. Returns the files written.
pub fn emit_plotdata(rows: &[CheckRow], dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    type Spec = (&'static str, &'static str, &'static str, &'static [&'static str]);
    let specs: [Spec; 3] = [
        ("variance_vs_V.csv", "variance", "t,V,estimate,ci95,target", &["t", "V"]),
        ("q_convergence.csv", "qspeed", "t,estimate,ci95,target", &["t"]),
        ("ks_curves.csv", "clt", "t,V,ks", &["t", "V"]),
    ];
    let mut written = vec![];
    for (file, check, header, keys) in specs {
        let mut sel: Vec<&CheckRow> =
            rows.iter().filter(|r| r.check == check && !r.param_json.contains("skipped")).collect();
        if sel.is_empty() {
            continue;
        }
        sel.sort_by(|a, b| {
            let ka: Vec<f64> = keys.iter().map(|k| param(a, k)).collect();
            let kb: Vec<f64> = keys.iter().map(|k| param(b, k)).collect();
            ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
        });
        let path = dir.join(file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_record(header.split(',')).map_err(|e| CliError::Runtime(e.to_string()))?;
        for r in sel {
            let mut rec: Vec<String> = keys.iter().map(|k| param(r, k).to_string()).collect();
            rec.push(r.estimate.to_string());
            if check != "clt" {
                rec.push(fmt_opt(r.ci95));
                rec.push(fmt_opt(r.target));
            }
            w.write_record(&rec).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

fn set_threads(n: Option<usize>) {
    if let Some(n) = n.filter(|&n| n > 0) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(config: &str, out_dir: &Path, strict: bool, plotdata: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let start = Instant::now();
    let cfg = load_config(config)?;
    if let Some(bad) = cfg.checks.iter().find(|c| !CHECKS.contains(&c.as_str())) {
        return Err(CliError::Config(format!("unknown check '{bad}'; expected one of {}", CHECKS.join(", "))));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut session = Session::new(cfg.clone())?;
    let rows = session.run_all()?;
    write_rows(&rows, &out_dir.join("report.csv"))?;
    if plotdata {
        emit_plotdata(&rows, out_dir)?;
    }
    let manifest = RunManifest {
        config: cfg.to_json(),
        seed: cfg.seed,
        version: VERSION.to_string(),
        outcomes: rows
            .iter()
            .map(|r| Outcome {
                check: r.check.clone(),
                param_json: r.param_json.clone(),
                pass: r.pass,
                gating: gating(r, strict),
            })
            .collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let mpath = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    summarize(&rows, strict, out)
}

fn summarize(rows: &[CheckRow], strict: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    for r in rows {
        let status = match r.pass {
            Some(true) => "pass",
            Some(false) if gating(r, strict) => "FAIL",
            Some(false) => "warn",
            None => "info",
        };
        let _ = writeln!(out, "{status:4} {} {} estimate={} target={}", r.check, r.param_json, r.estimate, fmt_opt(r.target));
    }
    Ok(outcome_code(rows, strict))
}

fn validate(config: &str, half_width: i64, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let spec = cfg.spec()?;
    let mut reports = vec![
        validate_monotonicity(&spec, half_width),
        validate_sum_rule(&spec, half_width),
        validate_product_rule(&spec, half_width),
    ];
    if let Some(b) = spec.bricklayer() {
        if spec.family() == Family::BL {
            reports.push(bl_pairing_check(|z| b.f(z), half_width));
        }
    }
    let mut code = 0;
    for r in &reports {
        let _ = writeln!(out, "{} {}: {} evaluated, {} violations", if r.passed() { "pass" } else { "FAIL" }, r.check, r.evaluated, r.violations.len());
        if let Some(v) = r.violations.first() {
            let _ = writeln!(out, "  first violation at {:?}: {} vs {}", v.args, v.lhs, v.rhs);
            code = 1;
        }
    }
    Ok(code)
}

#[derive(Serialize)]
struct TableRow {
    theta: f64,
    rho: f64,
    var: f64,
    m3: f64,
    er: f64,
    speed_closed: Option<f64>,
    speed_static: f64,
    certificate: Option<f64>,
}

fn table(config: &str, lo: f64, hi: f64, points: usize, out_path: Option<&Path>, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let spec = cfg.spec()?;
    if points == 0 {
        return Err(CliError::Config("points must be positive".into()));
    }
    let mut buf = vec![];
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for k in 0..points {
            let theta = if points == 1 { lo } else { lo + (hi - lo) * k as f64 / (points - 1) as f64 };
            let m = ResolvedModel::new(spec.clone(), theta)?;
            let fine = equilibrium::build_marginal(&spec, theta, equilibrium::FINE_EPS).map_err(EstimatorError::from)?;
            let row = TableRow {
                theta,
                rho: m.moments.rho,
                var: m.moments.var,
                m3: m.moments.m3,
                er: m.moments.er,
                speed_closed: equilibrium::characteristic_speed_closed(&spec, theta).ok(),
                speed_static: equilibrium::characteristic_speed_static(&spec, &fine),
                certificate: convexity_certificate(&spec, theta).ok(),
            };
            w.serialize(row).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match out_path {
        Some(p) => fs::write(p, &buf).map_err(io_err(p))?,
        None => out.write_all(&buf).map_err(|e| CliError::Runtime(e.to_string()))?,
    }
    Ok(0)
}

fn simulate(config: &str, out_path: &Path) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let model = cfg.resolve()?;
    let samples = run_currents(&model, cfg.len, &cfg.t, &cfg.v, cfg.replicas, derive_seed(cfg.seed, 0))?;
    let mut w = csv::Writer::from_path(out_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["replica", "t", "V", "J"]).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (r, rows) in samples.j.iter().enumerate() {
        for (ti, t) in samples.times.iter().enumerate() {
            for (vi, v) in samples.velocities.iter().enumerate() {
                w.write_record([r.to_string(), t.to_string(), v.to_string(), rows[ti][vi].to_string()])
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            }
        }
    }
    w.flush().map_err(io_err(out_path))?;
    Ok(0)
}

fn couple(config: &str, events: u64, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let model = cfg.resolve()?;
    let lower = model.at_theta(cfg.theta1.unwrap_or(model.theta))?;
    let upper = model.at_theta(cfg.theta2.unwrap_or(model.theta))?;
    if lower.theta > upper.theta {
        return Err(CliError::Config("theta1 must not exceed theta2".into()));
    }
    let rep = coupling_soak(&lower, &upper, cfg.len, events, derive_seed(cfg.seed, 0))?;
    let _ = writeln!(out, "{}", serde_json::to_string(&rep).expect("report serializes"));
    Ok(if rep.clean() { 0 } else { 1 })
}

fn oracle(config: &str, trials: usize, cap: i64, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    let model = cfg.resolve()?;
    let runtime = |e: crate::oracle::OracleError| CliError::Runtime(e.to_string());
    let st = stationarity_residual(&model.spec, model.theta, cfg.len, cap).map_err(runtime)?;
    let adj = adjoint_check_seeded(&model.spec, model.theta, cfg.len, cap, trials, cfg.seed).map_err(runtime)?;
    let ok = st.residual < 1e-10 && adj.max_discrepancy < 1e-9;
    let report = serde_json::json!({
        "states": st.states,
        "residual": st.residual,
        "leak": st.leak,
        "adjoint_max_discrepancy": adj.max_discrepancy,
        "min_dirichlet": adj.min_dirichlet,
        "trials": adj.trials,
        "pass": ok,
    });
    let _ = writeln!(out, "{report}");
    Ok(if ok { 0 } else { 1 })
}

fn estimate(checks: &[String], config: &str, out_path: &Path, strict: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = load_config(config)?;
    if let Some(bad) = checks.iter().find(|c| !CHECKS.contains(&c.as_str())) {
        return Err(CliError::Config(format!("unknown check '{bad}'; expected one of {}", CHECKS.join(", "))));
    }
    let mut session = Session::new(cfg)?;
    let mut rows = vec![];
    for c in checks {
        rows.extend(session.run_check(c)?);
    }
    write_rows(&rows, out_path)?;
    summarize(&rows, strict, out)
}

/// Runs the parsed command, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    set_threads(cli.threads);
    match cli.command {
        Command::Validate { config, half_width } => validate(&config, half_width, out),
        Command::Table { config, theta_min, theta_max, points, out: path } => {
            table(&config, theta_min, theta_max, points, path.as_deref(), out)
        }
        Command::Simulate { config, out: path } => simulate(&config, &path),
        Command::Couple { config, events } => couple(&config, events, out),
        Command::Estimate { check, config, out: path, strict } => estimate(&check, &config, &path, strict, out),
        Command::Oracle { config, trials, cap } => oracle(&config, trials, cap, out),
        Command::Run { config, out_dir, strict, plotdata } => run(&config, &out_dir, strict, plotdata, out),
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            let cfg = load_config(name).unwrap();
            assert!(cfg.checks.iter().all(|c| CHECKS.contains(&c.as_str())), "{name}");
        }
        assert!(matches!(load_config("preset-nope"), Err(CliError::Config(_))));
    }

    #[test]
    fn outcome_gating() {
        let mut stat = CheckRow::new("variance", serde_json::json!({}), 1.0);
        stat.pass = Some(false);
        assert_eq!(outcome_code(&[stat.clone()], false), 0);
        assert_eq!(outcome_code(&[stat], true), 1);
        let exact = CheckRow::exact("x", serde_json::json!({}), 1.0, 0.0, false);
        assert_eq!(outcome_code(&[exact], false), 1);
        assert_eq!(outcome_code(&[], true), 0);
    }
}
