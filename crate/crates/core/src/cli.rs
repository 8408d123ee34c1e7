//! Command-line front end. Matrices are read as header-less CSV (row-major),
//! estimates are written as JSON and tables as CSV.
//!
//! Exit codes: 0 success, 1 other failure, 2 dimension mismatch, 3 parse
//! failure (including bad arguments), 4 solver non-convergence.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::data::{Dataset, Representation};
use crate::error::ReadError;
use crate::rwpi::{confidence_region, select_delta, support_envelope};
use crate::sim::{coverage_experiment, run_experiment_with, sibling_path, write_curve, write_rows, write_summary, Experiment, SimConfig};
use crate::solver::{fit_erm, fit_read, SolverConfig};
use crate::tuning::{tune_lambda_with, TuneConfig};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_DIMENSION: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Read(ReadError::DimensionMismatch { .. }) => EXIT_DIMENSION,
            CliError::Read(ReadError::NonConvergence { .. }) => EXIT_NONCONVERGENCE,
            CliError::Read(_) | CliError::Io(_) => EXIT_OTHER,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "read-dro", version, about = "Representation-aware distributionally robust linear regression")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "READ_DRO_THREADS", default_value_t = 0)]
    pub threads: usize,

    /// TOML file with optional [sim], [tune] and [solver] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the estimator at a fixed or automatically selected radius.
    Fit(FitArgs),
    /// Select the radius by Monte Carlo quantile.
    SelectDelta(SelectArgs),
    /// Tune the alignment weights on a training/validation split.
    TuneLambda(TuneArgs),
    /// Build the confidence region around the least-squares fit.
    Region(RegionArgs),
    /// Run a simulation experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Covariates, N x d.
    #[arg(long)]
    pub x: PathBuf,
    /// Responses, N values.
    #[arg(long)]
    pub y: PathBuf,
    /// Prior coefficients, d x M.
    #[arg(long)]
    pub theta: Option<PathBuf>,
    /// Comma-separated alignment weights; `inf` allowed.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo draws.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Radius: a number, `inf`, or `auto`.
    #[arg(long)]
    pub delta: String,
    #[command(flatten)]
    pub mc: McArgs,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub mc: McArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub val_x: PathBuf,
    #[arg(long)]
    pub val_y: PathBuf,
    #[arg(long)]
    pub theta: PathBuf,
    #[command(flatten)]
    pub mc: McArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub mc: McArgs,
    /// Number of supporting half-spaces to emit.
    #[arg(long)]
    pub envelope: Option<usize>,
    /// CSV destination for the half-spaces (`v_1..v_d,offset`).
    #[arg(long)]
    pub envelope_out: Option<PathBuf>,
    /// Candidate points (K x d CSV) to test for membership.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// I, II, III, IV or coverage.
    #[arg(long)]
    pub experiment: String,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Row-level CSV (or JSON for the coverage study).
    #[arg(long)]
    pub out: PathBuf,
    /// Record wall-clock times in the runtime column.
    #[arg(long)]
    pub record_runtime: bool,
}

/// Partial simulation settings; anything missing falls back to the preset of
/// the chosen experiment.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct SimOverrides {
    pub experiment: Option<Experiment>,
    pub d: Option<usize>,
    pub N: Option<usize>,
    pub M: Option<usize>,
    pub reps: Option<usize>,
    pub C: Option<f64>,
    pub rho: Option<f64>,
    pub K: Option<usize>,
    pub sigma_noise: Option<f64>,
    pub alpha: Option<f64>,
    pub L: Option<usize>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub seed: Option<u64>,
    pub settings: Option<Vec<f64>>,
    pub lambda_points: Option<usize>,
    pub lambda_max: Option<f64>,
    pub environments: Option<usize>,
    pub coverage_lambda: Option<f64>,
    pub record_runtime: Option<bool>,
}

impl SimOverrides {
    fn apply(&self, cfg: &mut SimConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        set!(d, N, M, reps, C, rho, K, sigma_noise, alpha, L, mu, nu, seed, settings, lambda_points, lambda_max,
             environments, coverage_lambda, record_runtime);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub sim: SimOverrides,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }
}

/// Parses a number, accepting `inf` / `+inf` / `-inf` in any case.
pub fn parse_real(token: &str) -> CliResult<f64> {
    let t = token.trim();
    match t.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => return Ok(f64::INFINITY),
        "-inf" | "-infinity" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    t.parse::<f64>().map_err(|_| CliError::Parse(format!("cannot parse '{t}' as a number")))
}

pub fn parse_list(text: &str) -> CliResult<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',').map(parse_real).collect()
}

/// Reads a header-less CSV matrix.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(parse_real)
            .collect::<CliResult<Vec<f64>>>()
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_vector(path: &Path) -> CliResult<DVector<f64>> {
    let m = read_matrix(path)?;
    Ok(DVector::from_iterator(m.len(), m.transpose().iter().copied()))
}

/// JSON number, or the strings `"inf"`, `"-inf"`, `"nan"` for non-finite values.
pub fn json_real(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn json_vec<'a>(v: impl IntoIterator<Item = &'a f64>) -> Value {
    Value::Array(v.into_iter().map(|x| json_real(*x)).collect())
}

fn json_matrix(m: &DMatrix<f64>) -> Value {
    Value::Array(m.row_iter().map(|r| json_vec(r.iter())).collect())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_output(path, text.as_bytes())
}

fn load_problem(args: &ProblemArgs) -> CliResult<(Dataset, Representation)> {
    let x = read_matrix(&args.x)?;
    let y = read_vector(&args.y)?;
    let data = Dataset::new(x, y)?;
    let rep = match &args.theta {
        None => {
            if args.lambda.as_deref().is_some_and(|l| !l.trim().is_empty()) {
                return Err(CliError::Parse("--lambda given without --theta".into()));
            }
            Representation::none(data.d())
        }
        Some(path) => {
            let theta = read_matrix(path)?;
            let lambda = match &args.lambda {
                Some(text) => parse_list(text)?,
                None => return Err(CliError::Parse("--theta requires --lambda".into())),
            };
            if theta.nrows() != data.d() {
                return Err(ReadError::DimensionMismatch {
                    what: "prior matrix rows vs covariate dimension",
                    expected: data.d(),
                    found: theta.nrows(),
                }
                .into());
            }
            Representation::new(theta, lambda)?
        }
    };
    Ok((data, rep))
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Parse("--seed is required for randomized commands".into()))
}

struct McSettings {
    alpha: f64,
    count: usize,
    seed: u64,
}

fn mc_settings(args: &McArgs, tune: &TuneConfig) -> CliResult<McSettings> {
    Ok(McSettings {
        alpha: args.alpha.unwrap_or(tune.alpha),
        count: args.mc.unwrap_or(tune.L),
        seed: require_seed(args.seed)?,
    })
}

fn cmd_fit(args: &FitArgs, cfg: &RunConfig) -> CliResult<()> {
    let (data, rep) = load_problem(&args.problem)?;
    let delta = if args.delta.trim().eq_ignore_ascii_case("auto") {
        let mc = mc_settings(&args.mc, &cfg.tune)?;
        let beta_erm = fit_erm(&data)?;
        let q = select_delta(&data, &beta_erm, &rep, mc.alpha, mc.count, mc.seed)?;
        info!("selected eta = {} (delta = eta / N = {})", q.eta, q.delta);
        q.delta
    } else {
        parse_real(&args.delta)?
    };
    let est = fit_read(&data, &rep, delta, &cfg.solver)?;
    write_json(
        args.out.as_deref(),
        &json!({
            "beta": json_vec(est.beta.iter()),
            "kappa": json_vec(est.kappa.iter()),
            "delta": json_real(est.delta),
            "objective": json_real(est.objective),
            "converged": est.converged,
        }),
    )
}

fn cmd_select_delta(args: &SelectArgs, cfg: &RunConfig) -> CliResult<()> {
    let (data, rep) = load_problem(&args.problem)?;
    let mc = mc_settings(&args.mc, &cfg.tune)?;
    let beta_erm = fit_erm(&data)?;
    let q = select_delta(&data, &beta_erm, &rep, mc.alpha, mc.count, mc.seed)?;
    info!("selected eta = {}", q.eta);
    write_json(
        args.out.as_deref(),
        &json!({
            "eta": json_real(q.eta),
            "delta": json_real(q.delta),
            "alpha": q.alpha,
            "L": q.L,
            "samples_infinite_fraction": q.samples_infinite_fraction,
        }),
    )
}

fn cmd_tune_lambda(args: &TuneArgs, cfg: &RunConfig) -> CliResult<()> {
    let train = Dataset::new(read_matrix(&args.x)?, read_vector(&args.y)?)?;
    let val = Dataset::new(read_matrix(&args.val_x)?, read_vector(&args.val_y)?)?;
    let theta = read_matrix(&args.theta)?;
    let mut tune = cfg.tune.clone();
    if let Some(a) = args.mc.alpha {
        tune.alpha = a;
    }
    if let Some(l) = args.mc.mc {
        tune.L = l;
    }
    let seed = require_seed(args.mc.seed)?;
    let res = tune_lambda_with(&train, &val, &theta, &tune, &cfg.solver, seed)?;
    let table: Vec<Value> = res
        .objective_table
        .iter()
        .map(|c| json!({"a": json_real(c.a), "b": c.b, "eta": json_real(c.eta), "objective": json_real(c.objective)}))
        .collect();
    write_json(
        args.out.as_deref(),
        &json!({
            "lambda": json_vec(res.lambda.iter()),
            "delta": json_real(res.delta),
            "a_star": json_real(res.a_star),
            "b_star": res.b_star,
            "a_dagger": json_real(res.a_dagger),
            "kappa_init": json_vec(res.kappa_init.iter()),
            "objective_table": table,
        }),
    )
}

fn cmd_region(args: &RegionArgs, cfg: &RunConfig) -> CliResult<()> {
    let (data, rep) = load_problem(&args.problem)?;
    let mc = mc_settings(&args.mc, &cfg.tune)?;
    let beta_erm = fit_erm(&data)?;
    let region = confidence_region(&data, &beta_erm, &rep, mc.alpha, mc.count, mc.seed)?;
    info!("region threshold eta / N = {}", region.threshold());

    let mut doc = json!({
        "center": json_vec(region.center.iter()),
        "Sigma_hat": json_matrix(&region.Sigma_hat),
        "GammaTilde": json_matrix(&region.GammaTilde),
        "eta": json_real(region.eta),
        "threshold": json_real(region.threshold()),
        "sigma2_hat": region.sigma2_hat,
        "center_inside": region.contains(&region.center),
    });
    if let Some(path) = &args.points {
        let pts = read_matrix(path)?;
        if pts.ncols() != data.d() {
            return Err(ReadError::DimensionMismatch { what: "point dimension", expected: data.d(), found: pts.ncols() }.into());
        }
        let inside: Vec<bool> = pts.row_iter().map(|r| region.contains(&r.transpose())).collect();
        doc["points_inside"] = json!(inside);
    }
    if let Some(k) = args.envelope {
        let halves = support_envelope(&region, k, mc.seed)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (1..=data.d()).map(|j| format!("v_{j}")).collect();
        header.push("offset".into());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(&header).map_err(io)?;
        for h in &halves {
            let mut rec: Vec<String> = h.normal.iter().map(|v| v.to_string()).collect();
            rec.push(h.offset.to_string());
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        match &args.envelope_out {
            Some(p) => write_output(Some(p), &bytes)?,
            None => doc["envelope"] = Value::String(String::from_utf8_lossy(&bytes).into_owned()),
        }
    }
    write_json(args.out.as_deref(), &doc)
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> crate::error::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_output(Some(path), &buf)
}

fn cmd_simulate(args: &SimulateArgs, cfg: &RunConfig) -> CliResult<()> {
    let experiment: Experiment = args
        .experiment
        .parse()
        .map_err(|e: ReadError| CliError::Parse(e.to_string()))?;
    if cfg.sim.experiment.is_some_and(|e| e != experiment) {
        return Err(CliError::Parse("config [sim] experiment disagrees with --experiment".into()));
    }
    let mut sim = SimConfig::preset(experiment);
    cfg.sim.apply(&mut sim);
    if let Some(r) = args.reps {
        sim.reps = r;
    }
    sim.seed = require_seed(args.seed)?;
    if args.record_runtime {
        sim.record_runtime = true;
    }

    if experiment == Experiment::Coverage {
        let coverage = coverage_experiment(&sim)?;
        info!("coverage = {coverage}");
        return write_json(
            Some(&args.out),
            &json!({
                "experiment": "coverage",
                "coverage": coverage,
                "reps": sim.reps,
                "alpha": sim.alpha,
                "N": sim.N,
                "d": sim.d,
                "lambda": json_real(sim.coverage_lambda),
            }),
        );
    }
    let res = run_experiment_with(&sim, &cfg.solver)?;
    write_file(&args.out, |b| write_rows(b, &res.rows))?;
    write_file(&sibling_path(&args.out, "summary"), |b| write_summary(b, &res.summary()))?;
    if let Some(curve) = &res.curve {
        write_file(&sibling_path(&args.out, "lambda_curve"), |b| write_curve(b, curve))?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cfg),
        Command::SelectDelta(a) => cmd_select_delta(a, &cfg),
        Command::TuneLambda(a) => cmd_tune_lambda(a, &cfg),
        Command::Region(a) => cmd_region(a, &cfg),
        Command::Simulate(a) => cmd_simulate(a, &cfg),
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
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
    fn real_tokens() {
        assert_eq!(parse_real("INF").unwrap(), f64::INFINITY);
        assert_eq!(parse_real(" inf ").unwrap(), f64::INFINITY);
        assert_eq!(parse_real("2.5").unwrap(), 2.5);
        assert!(parse_real("abc").is_err());
        assert_eq!(parse_list("1,Inf,0").unwrap(), vec![1.0, f64::INFINITY, 0.0]);
    }

    #[test]
    fn json_non_finite() {
        assert_eq!(json_real(f64::INFINITY), json!("inf"));
        assert_eq!(json_real(1.5), json!(1.5));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: RunConfig = toml::from_str("[sim]\nN = 40\nrho = 0.9\n[tune]\nL = 500\na_grid = [1.0, inf]\n[solver]\ntol = 1e-9\n").unwrap();
        assert_eq!(ok.sim.N, Some(40));
        assert_eq!(ok.tune.L, 500);
        assert_eq!(ok.tune.a_grid, vec![1.0, f64::INFINITY]);
        assert_eq!(ok.solver.tol, 1e-9);
        assert_eq!(ok.solver.max_iter, 200);
        assert!(toml::from_str::<RunConfig>("[sim]\nn = 40\n").is_err());
        assert!(toml::from_str::<RunConfig>("[other]\n").is_err());
    }

    #[test]
    fn overrides_apply_on_preset() {
        let o: SimOverrides = toml::from_str("reps = 3\nsettings = [0.5]\n").unwrap();
        let mut cfg = SimConfig::preset(Experiment::II);
        o.apply(&mut cfg);
        assert_eq!(cfg.reps, 3);
        assert_eq!(cfg.settings, vec![0.5]);
        assert_eq!(cfg.N, 90);
    }
}
