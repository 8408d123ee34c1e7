//! Synthetic transfer-learning experiments comparing least squares (ERM),
//! plain Wasserstein DRO (`Lambda = 0`), hard-constrained DRO
//! (`Lambda = inf`, "KG-DRO") and the tuned estimator ("READ").
//!
//! Every replication draws from its own substream keyed by
//! `(seed, setting index, replication)`, so results do not depend on the
//! number of worker threads.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Representation};
use crate::error::{invalid, ReadError, Result};
use crate::geometry::{psi_matrix, RANK_TOL};
use crate::linalg::orthonormal_basis;
use crate::rng::{derive_seed, std_normal, substream};
use crate::rwpi::{build_xis, confidence_region, quantile_from_draws, score_draws, select_delta};
use crate::solver::{fit_erm, fit_read_with_geometry, SolverConfig};
use crate::tuning::{tune_lambda_with, TuneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Experiment {
    I,
    II,
    III,
    IV,
    #[serde(rename = "coverage")]
    Coverage,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::I => "I",
            Experiment::II => "II",
            Experiment::III => "III",
            Experiment::IV => "IV",
            Experiment::Coverage => "coverage",
        })
    }
}

impl FromStr for Experiment {
    type Err = ReadError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(Experiment::I),
            "ii" | "2" => Ok(Experiment::II),
            "iii" | "3" => Ok(Experiment::III),
            "iv" | "4" => Ok(Experiment::IV),
            "coverage" => Ok(Experiment::Coverage),
            _ => Err(invalid(format!("unknown experiment '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Method {
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "DRO")]
    Dro,
    #[serde(rename = "KG-DRO")]
    KgDro,
    #[serde(rename = "READ")]
    Read,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erm, Method::Dro, Method::KgDro, Method::Read];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "ERM",
            Method::Dro => "DRO",
            Method::KgDro => "KG-DRO",
            Method::Read => "READ",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct SimConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub N: usize,
    pub M: usize,
    pub reps: usize,
    /// Expected squared norm of the prior columns and of the target.
    pub C: f64,
    pub rho: f64,
    /// Nonzero entries of the mixing vector; 0 means dense.
    pub K: usize,
    pub sigma_noise: f64,
    pub alpha: f64,
    pub L: usize,
    pub mu: f64,
    pub nu: f64,
    pub seed: u64,
    /// Values of the swept variable (`rho` for I/III/IV, `M` for II). Empty
    /// means the experiment's standard sweep.
    pub settings: Vec<f64>,
    /// Number of finite grid points on `[0, lambda_max]` for the
    /// single-source curve of experiment III; `inf` is always appended.
    pub lambda_points: usize,
    pub lambda_max: f64,
    /// Shifted test environments per replication in experiment IV.
    pub environments: usize,
    /// Fixed single-source weight used by the coverage experiment.
    pub coverage_lambda: f64,
    /// Fill the `runtime_seconds` column with wall-clock times. Off by default
    /// so repeated runs produce identical files.
    pub record_runtime: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::preset(Experiment::I)
    }
}

impl SimConfig {
    /// Standard configuration for an experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let base = SimConfig {
            experiment,
            d: 50,
            N: 70,
            M: 7,
            reps: 100,
            C: 2.0,
            rho: 0.85,
            K: 0,
            sigma_noise: 1.0,
            alpha: 0.1,
            L: 2000,
            mu: 1.0,
            nu: 0.0,
            seed: 0,
            settings: Vec::new(),
            lambda_points: 50,
            lambda_max: 200.0,
            environments: 20,
            coverage_lambda: 5.0,
            record_runtime: false,
        };
        match experiment {
            Experiment::I | Experiment::IV => base,
            Experiment::II => SimConfig { N: 90, M: 15, C: 1.0, K: 5, nu: 0.3, mu: 1.0, ..base },
            Experiment::III => SimConfig { d: 30, N: 90, M: 1, C: 1.0, rho: 0.62, ..base },
            Experiment::Coverage => SimConfig { d: 5, N: 200, M: 1, C: 1.0, rho: 0.5, reps: 500, ..base },
        }
    }

    /// Values swept by [`run_experiment`].
    pub fn sweep(&self) -> Vec<f64> {
        if !self.settings.is_empty() {
            return self.settings.clone();
        }
        match self.experiment {
            Experiment::I => vec![0.65, 0.75, 0.85, 0.95],
            Experiment::II => vec![15.0, 25.0, 35.0, 45.0],
            Experiment::III | Experiment::IV | Experiment::Coverage => vec![self.rho],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.N < 2 {
            return Err(invalid("need d >= 1 and N >= 2"));
        }
        if self.reps == 0 {
            return Err(invalid("reps must be at least 1"));
        }
        if !(self.C > 0.0 && self.C.is_finite()) {
            return Err(invalid("C must be positive"));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(invalid("sigma_noise must be nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        if self.L < 100 {
            return Err(invalid("L must be at least 100"));
        }
        for (rho, m) in self.sweep().iter().map(|&v| self.resolve(v)) {
            if !(0.0..=1.0).contains(&rho) {
                return Err(invalid(format!("rho must lie in [0, 1], got {rho}")));
            }
            if self.K > m {
                return Err(invalid(format!("K = {} exceeds M = {m}", self.K)));
            }
        }
        if self.experiment == Experiment::II
            && self.sweep().iter().any(|v| *v < 0.0 || v.fract() != 0.0)
        {
            return Err(invalid("experiment II settings must be nonnegative integers"));
        }
        if self.experiment == Experiment::Coverage && self.N <= self.d {
            return Err(invalid("coverage experiment needs N > d"));
        }
        if self.experiment == Experiment::III && self.M != 1 {
            return Err(invalid("experiment III uses a single prior direction (M = 1)"));
        }
        Ok(())
    }

    /// `(rho, M)` for one sweep value.
    fn resolve(&self, setting: f64) -> (f64, usize) {
        match self.experiment {
            Experiment::II => (self.rho, setting as usize),
            _ => (setting, self.M),
        }
    }

    pub fn tune_config(&self) -> TuneConfig {
        TuneConfig { mu: self.mu, nu: self.nu, alpha: self.alpha, L: self.L, ..TuneConfig::default() }
    }
}

/// `d x M` prior matrix with iid `N(0, C / d)` entries.
pub fn gen_knowledge(d: usize, m: usize, c: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let sd = (c / d as f64).sqrt();
    DMatrix::from_fn(d, m, |_, _| sd * std_normal(rng))
}

/// Target coefficients `beta* = rho Theta kappa + sqrt(1 - rho^2) eps` with a
/// unit mixing vector `kappa` supported on `k` random entries (`k = 0`: all)
/// and `eps ~ N(0, C / d I)`.
pub fn gen_beta(theta: &DMatrix<f64>, rho: f64, c: f64, k: usize, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let (d, m) = theta.shape();
    let mut kappa = DVector::zeros(m);
    if m > 0 {
        let support: Vec<usize> = if k == 0 || k >= m {
            (0..m).collect()
        } else {
            rand::seq::index::sample(rng, m, k).into_vec()
        };
        for &j in &support {
            kappa[j] = std_normal(rng);
        }
        let norm = kappa.norm();
        if norm > 0.0 {
            kappa /= norm;
        }
    }
    let sd = (c / d as f64).sqrt();
    let eps = DVector::from_fn(d, |_, _| sd * std_normal(rng));
    let beta = theta * &kappa * rho + eps * (1.0 - rho * rho).max(0.0).sqrt();
    (beta, kappa)
}

/// `N` rows `x ~ N(0, I_d)` and `y = x^T beta + sigma e`.
pub fn gen_data(beta: &DVector<f64>, n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let d = beta.len();
    let x = DMatrix::from_fn(n, d, |_, _| std_normal(rng));
    let noise = DVector::from_fn(n, |_, _| std_normal(rng));
    let y = &x * beta + noise * sigma;
    Dataset::new(x, y)
}

#[derive(Debug, Clone)]
pub struct MethodFit {
    pub method: Method,
    pub beta: DVector<f64>,
    pub delta: f64,
    pub runtime_seconds: f64,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// DRO fit at `Lambda` with the radius chosen by Monte Carlo quantile.
fn fit_with_selected_radius(
    train: &Dataset,
    beta_erm: &DVector<f64>,
    rep: &Representation,
    tune: &TuneConfig,
    solver: &SolverConfig,
    seed: u64,
) -> Result<(DVector<f64>, f64)> {
    let q = select_delta(train, beta_erm, rep, tune.alpha, tune.L, seed)?;
    let geom = psi_matrix(rep)?;
    let est = fit_read_with_geometry(train, rep, &geom, q.delta, solver)?;
    Ok((est.beta, q.delta))
}

/// Fits all four estimators on one training set. Monte Carlo draws for the
/// radius come from `seed` and are shared by every method.
pub fn run_methods(
    train: &Dataset,
    val: &Dataset,
    theta: &DMatrix<f64>,
    tune: &TuneConfig,
    solver: &SolverConfig,
    seed: u64,
) -> Result<Vec<MethodFit>> {
    let (beta_erm, t_erm) = timed(|| fit_erm(train))?;
    let m = theta.ncols();
    let mut fits = vec![MethodFit { method: Method::Erm, beta: beta_erm.clone(), delta: 0.0, runtime_seconds: t_erm }];

    let plain = Representation::new(theta.clone(), vec![0.0; m])?;
    let ((beta, delta), t) = timed(|| fit_with_selected_radius(train, &beta_erm, &plain, tune, solver, seed))?;
    fits.push(MethodFit { method: Method::Dro, beta, delta, runtime_seconds: t + t_erm });

    let hard = Representation::new(theta.clone(), vec![f64::INFINITY; m])?;
    let ((beta, delta), t) = timed(|| fit_with_selected_radius(train, &beta_erm, &hard, tune, solver, seed))?;
    fits.push(MethodFit { method: Method::KgDro, beta, delta, runtime_seconds: t + t_erm });

    let ((beta, delta), t) = timed(|| {
        let tuned = tune_lambda_with(train, val, theta, tune, solver, seed)?;
        let rep = Representation::new(theta.clone(), tuned.lambda)?;
        let geom = psi_matrix(&rep)?;
        let est = fit_read_with_geometry(train, &rep, &geom, tuned.delta, solver)?;
        Ok((est.beta, tuned.delta))
    })?;
    fits.push(MethodFit { method: Method::Read, beta, delta, runtime_seconds: t });
    Ok(fits)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub experiment: Experiment,
    pub setting: f64,
    pub method: Method,
    pub rep: usize,
    pub bias_reduction: f64,
    pub mse_improvement: f64,
    pub runtime_seconds: f64,
}

/// Mean single-source bias norm `||beta_hat - beta*||` along a `lambda` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaCurve {
    pub lambdas: Vec<f64>,
    pub mean_bias: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: usize,
}

impl LambdaCurve {
    /// Index of the smallest mean bias (first one on ties).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.mean_bias.iter().enumerate() {
            if *v < self.mean_bias[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub experiment: Experiment,
    pub rows: Vec<SimRow>,
    pub curve: Option<LambdaCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: Experiment,
    pub setting: f64,
    pub method: Method,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error (`sd / sqrt(n)`, `n - 1` denominator).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SimResult {
    /// Per setting and method: `mse_improvement` for experiment IV,
    /// `bias_reduction` otherwise.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut settings: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !settings.contains(&r.setting) {
                settings.push(r.setting);
            }
        }
        let mut out = Vec::new();
        for &s in &settings {
            for method in Method::ALL {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.setting == s && r.method == method)
                    .map(|r| if self.experiment == Experiment::IV { r.mse_improvement } else { r.bias_reduction })
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let (mean, stderr) = mean_stderr(&vals);
                out.push(SummaryRow { experiment: self.experiment, setting: s, method, mean, stderr, n: vals.len() });
            }
        }
        out
    }

    pub fn summary_for(&self, setting: f64, method: Method) -> Option<SummaryRow> {
        self.summary().into_iter().find(|r| r.setting == setting && r.method == method)
    }
}

struct RepOutput {
    rows: Vec<SimRow>,
    curve: Option<Vec<f64>>,
}

fn ratio_improvement(value: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        1.0 - value / baseline
    }
}

fn lambda_grid(cfg: &SimConfig) -> Vec<f64> {
    let k = cfg.lambda_points;
    let mut grid: Vec<f64> = match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| cfg.lambda_max * i as f64 / (k - 1) as f64).collect(),
    };
    grid.push(f64::INFINITY);
    grid
}

fn run_rep(cfg: &SimConfig, setting_idx: usize, setting: f64, rep: usize, solver: &SolverConfig) -> Result<RepOutput> {
    let (rho, m) = cfg.resolve(setting);
    let keys = [setting_idx as u64, rep as u64];
    let mut rng = substream(cfg.seed, &keys);
    let theta = gen_knowledge(cfg.d, m, cfg.C, &mut rng);
    let (beta_star, _) = gen_beta(&theta, rho, cfg.C, cfg.K, &mut rng);
    let train = gen_data(&beta_star, cfg.N, cfg.sigma_noise, &mut rng)?;
    let val = gen_data(&beta_star, cfg.N, cfg.sigma_noise, &mut rng)?;
    let mc_seed = derive_seed(cfg.seed, &[setting_idx as u64, rep as u64, 1]);
    let fits = run_methods(&train, &val, &theta, &cfg.tune_config(), solver, mc_seed)?;

    let s2 = cfg.sigma_noise * cfg.sigma_noise;
    let erm = &fits[0].beta;
    let erm_bias = (erm - &beta_star).norm();

    // Shifted environments for experiment IV.
    let shifts: Vec<DVector<f64>> = if cfg.experiment == Experiment::IV {
        let mut env_rng = substream(cfg.seed, &[setting_idx as u64, rep as u64, 2]);
        let basis = orthonormal_basis(&theta, RANK_TOL * theta.norm());
        let sd = (cfg.C / (5.0 * cfg.d as f64)).sqrt();
        (0..cfg.environments)
            .map(|_| {
                let z = DVector::from_fn(cfg.d, |_, _| sd * std_normal(&mut env_rng));
                let along = &basis * basis.tr_mul(&z);
                &beta_star + (&z - &along) + along * 0.2
            })
            .collect()
    } else {
        Vec::new()
    };

    let rows = fits
        .iter()
        .map(|fit| {
            let is_erm = fit.method == Method::Erm;
            let bias = (&fit.beta - &beta_star).norm();
            let bias_reduction = if is_erm { 0.0 } else { ratio_improvement(bias, erm_bias) };
            let mse_improvement = if is_erm {
                0.0
            } else if cfg.experiment == Experiment::IV {
                let total: f64 = shifts
                    .iter()
                    .map(|b| ratio_improvement((&fit.beta - b).norm_squared() + s2, (erm - b).norm_squared() + s2))
                    .sum();
                total / shifts.len().max(1) as f64
            } else {
                ratio_improvement(bias * bias + s2, erm_bias * erm_bias + s2)
            };
            SimRow {
                experiment: cfg.experiment,
                setting,
                method: fit.method,
                rep,
                bias_reduction,
                mse_improvement,
                runtime_seconds: if cfg.record_runtime { fit.runtime_seconds } else { 0.0 },
            }
        })
        .collect();

    let curve = if cfg.experiment == Experiment::III {
        let beta_erm = erm.clone();
        let xis = build_xis(&train, &beta_erm)?;
        let draws = score_draws(&train, &beta_erm, cfg.L, mc_seed)?;
        let points = lambda_grid(cfg)
            .into_iter()
            .map(|lam| {
                let rep = Representation::new(theta.clone(), vec![lam; m])?;
                let geom = psi_matrix(&rep)?;
                let q = quantile_from_draws(&draws, &xis, &geom, cfg.alpha)?;
                let est = fit_read_with_geometry(&train, &rep, &geom, q.delta, solver)?;
                Ok((&est.beta - &beta_star).norm())
            })
            .collect::<Result<Vec<f64>>>()?;
        Some(points)
    } else {
        None
    };
    Ok(RepOutput { rows, curve })
}

/// Runs experiments I-IV. Use [`coverage_experiment`] for the coverage study.
pub fn run_experiment(cfg: &SimConfig) -> Result<SimResult> {
    run_experiment_with(cfg, &SolverConfig::default())
}

pub fn run_experiment_with(cfg: &SimConfig, solver: &SolverConfig) -> Result<SimResult> {
    cfg.validate()?;
    if cfg.experiment == Experiment::Coverage {
        return Err(invalid("the coverage study returns a scalar; call coverage_experiment"));
    }
    let sweep = cfg.sweep();
    let jobs: Vec<(usize, usize)> = (0..sweep.len()).flat_map(|s| (0..cfg.reps).map(move |r| (s, r))).collect();
    let outputs = jobs
        .par_iter()
        .map(|&(s, r)| run_rep(cfg, s, sweep[s], r, solver))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(outputs.len() * Method::ALL.len());
    let mut curves = Vec::new();
    for out in outputs {
        rows.extend(out.rows);
        if let Some(c) = out.curve {
            curves.push(c);
        }
    }
    let curve = if curves.is_empty() {
        None
    } else {
        let lambdas = lambda_grid(cfg);
        let (mean_bias, stderr) = (0..lambdas.len())
            .map(|j| mean_stderr(&curves.iter().map(|c| c[j]).collect::<Vec<_>>()))
            .unzip();
        Some(LambdaCurve { lambdas, mean_bias, stderr, n: curves.len() })
    };
    Ok(SimResult { experiment: cfg.experiment, rows, curve })
}

/// Fraction of replications whose confidence region (single prior direction,
/// weight `coverage_lambda`) contains the true coefficients.
pub fn coverage_experiment(cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let rep_lambda = cfg.coverage_lambda;
    let hits = (0..cfg.reps)
        .into_par_iter()
        .map(|r| -> Result<bool> {
            let mut rng = substream(cfg.seed, &[0, r as u64]);
            let theta = gen_knowledge(cfg.d, cfg.M, cfg.C, &mut rng);
            let (beta_star, _) = gen_beta(&theta, cfg.rho, cfg.C, cfg.K, &mut rng);
            let data = gen_data(&beta_star, cfg.N, cfg.sigma_noise, &mut rng)?;
            let beta_erm = fit_erm(&data)?;
            let rep = Representation::uniform(theta, rep_lambda)?;
            let region = confidence_region(&data, &beta_erm, &rep, cfg.alpha, cfg.L, derive_seed(cfg.seed, &[0, r as u64, 1]))?;
            Ok(region.contains(&beta_star))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

pub const ROW_HEADER: [&str; 7] =
    ["experiment", "setting", "method", "rep", "bias_reduction", "mse_improvement", "runtime_seconds"];
pub const SUMMARY_HEADER: [&str; 6] = ["experiment", "setting", "method", "mean", "stderr", "n"];
pub const CURVE_HEADER: [&str; 4] = ["lambda", "mean_bias_norm", "stderr", "n"];

fn csv_err(e: csv::Error) -> ReadError {
    ReadError::Io(e.to_string())
}

pub fn write_rows<W: Write>(out: W, rows: &[SimRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROW_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.experiment.to_string(),
            r.setting.to_string(),
            r.method.to_string(),
            r.rep.to_string(),
            r.bias_reduction.to_string(),
            r.mse_improvement.to_string(),
            r.runtime_seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ReadError::Io(e.to_string()))
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.experiment.to_string(),
            r.setting.to_string(),
            r.method.to_string(),
            r.mean.to_string(),
            r.stderr.to_string(),
            r.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ReadError::Io(e.to_string()))
}

pub fn write_curve<W: Write>(out: W, curve: &LambdaCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER).map_err(csv_err)?;
    for i in 0..curve.lambdas.len() {
        w.write_record([
            curve.lambdas[i].to_string(),
            curve.mean_bias[i].to_string(),
            curve.stderr[i].to_string(),
            curve.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| ReadError::Io(e.to_string()))
}

/// Sibling path `<stem>_<suffix>.csv` next to `path`.
pub fn sibling_path(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}
