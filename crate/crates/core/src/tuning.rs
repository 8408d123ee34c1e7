//! Selection of the alignment weights `Lambda` within the family
//! `Lambda(a, b) = a |kappa_init|^b`.
//!
//! Each grid cell is scored by `J = eta(Lambda) * g^T Sigma^{-1} g`, where `g` is
//! the gradient of the data sensitivity `V(beta) = 2 phi(beta) sqrt(MSE(beta))`
//! at the least-squares fit and `eta` is the simulated radius quantile. The
//! final scale `a` is then picked on a validation set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Representation};
use crate::error::{invalid, ReadError, Result};
use crate::geometry::{phi_with_geometry, psi_matrix, Geometry};
use crate::linalg::{lstsq, pinv_sym};
use crate::rwpi::{build_xis, quantile_from_draws, score_draws, ScoreDraws, XiSet};
use crate::solver::{fit_erm, fit_read_with_geometry, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct TuneConfig {
    /// Elastic-net mixing: 1 is pure ridge, 0 pure lasso.
    pub mu: f64,
    /// Elastic-net strength.
    pub nu: f64,
    pub a_grid: Vec<f64>,
    pub b_grid: Vec<f64>,
    pub alpha: f64,
    pub L: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            nu: 0.0,
            a_grid: vec![0.1, 1.0, 10.0, 1e2, 1e3, 1e4, f64::INFINITY],
            b_grid: vec![0.0, 0.5, 1.0, 2.0],
            alpha: 0.1,
            L: 2000,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(invalid("mu must lie in [0, 1]"));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(invalid("nu must be finite and nonnegative"));
        }
        if self.a_grid.is_empty() || self.b_grid.is_empty() {
            return Err(invalid("tuning grids must be nonempty"));
        }
        if self.a_grid.iter().any(|a| !(*a > 0.0)) {
            return Err(invalid("a_grid entries must be positive"));
        }
        if self.b_grid.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(invalid("b_grid entries must be finite and nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One scored grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveCell {
    pub a: f64,
    pub b: f64,
    pub eta: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub lambda: Vec<f64>,
    pub delta: f64,
    pub a_star: f64,
    pub b_star: f64,
    pub a_dagger: f64,
    pub objective_table: Vec<ObjectiveCell>,
    pub kappa_init: Vec<f64>,
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Elastic-net coefficients of `beta` on the columns of `theta`:
/// `argmin ||beta - Theta k||^2 + nu (mu ||k||^2 + (1 - mu) ||k||_1)`.
pub fn kappa_init(beta: &DVector<f64>, theta: &DMatrix<f64>, mu: f64, nu: f64) -> Result<DVector<f64>> {
    if theta.nrows() != beta.len() {
        return Err(ReadError::DimensionMismatch {
            what: "prior matrix rows vs coefficient length",
            expected: beta.len(),
            found: theta.nrows(),
        });
    }
    if !(0.0..=1.0).contains(&mu) || !(nu >= 0.0) {
        return Err(invalid("elastic-net parameters out of range"));
    }
    let m = theta.ncols();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    if nu == 0.0 {
        return Ok(lstsq(theta, beta, 1e-12));
    }
    let l1 = 0.5 * nu * (1.0 - mu);
    let l2 = nu * mu;
    let norms: Vec<f64> = theta.column_iter().map(|c| c.norm_squared()).collect();
    let mut kappa: DVector<f64> = DVector::zeros(m);
    let mut resid = beta.clone();
    for _ in 0..100_000 {
        let mut max_change = 0.0_f64;
        for j in 0..m {
            let col = theta.column(j);
            let rho = col.dot(&resid) + norms[j] * kappa[j];
            let denom = norms[j] + l2;
            let next = if denom > 0.0 { soft_threshold(rho, l1) / denom } else { 0.0 };
            let change = next - kappa[j];
            if change != 0.0 {
                resid.axpy(-change, &col, 1.0);
                kappa[j] = next;
            }
            max_change = max_change.max(change.abs());
        }
        if max_change < 1e-10 {
            break;
        }
    }
    Ok(kappa)
}

/// `V(beta) = 2 phi(beta) sqrt(MSE(beta))`.
pub fn v_n(data: &Dataset, rep: &Representation, beta: &DVector<f64>) -> Result<f64> {
    data.check_beta(beta)?;
    let geom = psi_matrix(rep)?;
    Ok(2.0 * geom.seminorm(beta) * data.mse(beta).sqrt())
}

fn grad_with_geometry(data: &Dataset, geom: &Geometry, beta: &DVector<f64>) -> Result<DVector<f64>> {
    let phi = geom.seminorm(beta);
    if phi == 0.0 {
        return Err(ReadError::NonDifferentiable("phi vanishes at beta"));
    }
    let r = data.residuals(beta);
    let n = data.n() as f64;
    let rmse = (r.norm_squared() / n).sqrt();
    if rmse == 0.0 {
        return Err(ReadError::NonDifferentiable("residuals vanish at beta"));
    }
    let dphi = &geom.psi * beta / phi;
    let drmse = -data.x().tr_mul(&r) / (n * rmse);
    Ok((dphi * rmse + drmse * phi) * 2.0)
}

/// Gradient of [`v_n`].
pub fn grad_v_n(data: &Dataset, rep: &Representation, beta: &DVector<f64>) -> Result<DVector<f64>> {
    data.check_beta(beta)?;
    let geom = psi_matrix(rep)?;
    grad_with_geometry(data, &geom, beta)
}

/// Everything that stays fixed while `Lambda` varies.
struct Workspace<'a> {
    data: &'a Dataset,
    beta: DVector<f64>,
    xis: XiSet,
    draws: ScoreDraws,
    gram_pinv: DMatrix<f64>,
    alpha: f64,
}

impl<'a> Workspace<'a> {
    fn new(data: &'a Dataset, beta: &DVector<f64>, alpha: f64, count: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            data,
            beta: beta.clone(),
            xis: build_xis(data, beta)?,
            draws: score_draws(data, beta, count, seed)?,
            gram_pinv: pinv_sym(&data.gram(), 1e-12),
            alpha,
        })
    }

    /// `(eta, J)` for one geometry.
    fn score(&self, geom: &Geometry) -> Result<(f64, f64)> {
        let eta = quantile_from_draws(&self.draws, &self.xis, geom, self.alpha)?.eta;
        if eta.is_infinite() {
            return Ok((eta, f64::INFINITY));
        }
        let g = grad_with_geometry(self.data, geom, &self.beta)?;
        Ok((eta, eta * g.dot(&(&self.gram_pinv * &g))))
    }
}

/// `J(Lambda) = eta(Lambda) g^T Sigma^{-1} g` with `Sigma = X^T X / N`.
///
/// Calls with the same seed share their Monte Carlo draws, so objective values
/// for different `Lambda` are directly comparable.
pub fn lambda_objective(
    data: &Dataset,
    beta_erm: &DVector<f64>,
    theta: &DMatrix<f64>,
    lambda: &[f64],
    alpha: f64,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let rep = Representation::new(theta.clone(), lambda.to_vec())?;
    if rep.d() != data.d() {
        return Err(ReadError::DimensionMismatch {
            what: "prior matrix rows vs covariate dimension",
            expected: data.d(),
            found: rep.d(),
        });
    }
    let ws = Workspace::new(data, beta_erm, alpha, count, seed)?;
    Ok(ws.score(&psi_matrix(&rep)?)?.1)
}

/// `a |kappa|^b` entrywise with `0^0 = 1` and `inf * 0 = 0`.
pub fn lambda_from_family(kappa: &DVector<f64>, a: f64, b: f64) -> Vec<f64> {
    kappa
        .iter()
        .map(|k| {
            let base = if b == 0.0 { 1.0 } else { k.abs().powf(b) };
            if base == 0.0 {
                0.0
            } else {
                a * base
            }
        })
        .collect()
}

/// Grid-search tuning with the default solver settings.
pub fn tune_lambda(train: &Dataset, val: &Dataset, theta: &DMatrix<f64>, cfg: &TuneConfig, seed: u64) -> Result<TuneResult> {
    tune_lambda_with(train, val, theta, cfg, &SolverConfig::default(), seed)
}

pub fn tune_lambda_with(
    train: &Dataset,
    val: &Dataset,
    theta: &DMatrix<f64>,
    cfg: &TuneConfig,
    solver: &SolverConfig,
    seed: u64,
) -> Result<TuneResult> {
    cfg.validate()?;
    if val.d() != train.d() {
        return Err(ReadError::DimensionMismatch { what: "validation covariates", expected: train.d(), found: val.d() });
    }
    if theta.nrows() != train.d() {
        return Err(ReadError::DimensionMismatch {
            what: "prior matrix rows vs covariate dimension",
            expected: train.d(),
            found: theta.nrows(),
        });
    }
    let beta = fit_erm(train)?;
    let kappa = kappa_init(&beta, theta, cfg.mu, cfg.nu)?;
    let ws = Workspace::new(train, &beta, cfg.alpha, cfg.L, seed)?;

    let cells: Vec<(usize, usize)> =
        (0..cfg.a_grid.len()).flat_map(|i| (0..cfg.b_grid.len()).map(move |j| (i, j))).collect();
    let scored: Vec<Result<ObjectiveCell>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (cfg.a_grid[i], cfg.b_grid[j]);
            let rep = Representation::new(theta.clone(), lambda_from_family(&kappa, a, b))?;
            let (eta, objective) = match ws.score(&psi_matrix(&rep)?) {
                Ok(v) => v,
                Err(ReadError::NonDifferentiable(_)) => (f64::INFINITY, f64::INFINITY),
                Err(e) => return Err(e),
            };
            Ok(ObjectiveCell { a, b, eta, objective })
        })
        .collect();
    let table = scored.into_iter().collect::<Result<Vec<_>>>()?;

    let mut best: Option<&ObjectiveCell> = None;
    for cell in table.iter().filter(|c| c.objective.is_finite()) {
        best = match best {
            None => Some(cell),
            Some(cur) => {
                let better = cell.objective < cur.objective
                    || (cell.objective == cur.objective && (cell.a, cell.b) < (cur.a, cur.b));
                Some(if better { cell } else { cur })
            }
        };
    }
    let Some(best) = best else {
        let zero = vec![0.0; theta.ncols()];
        let rep = Representation::new(theta.clone(), zero.clone())?;
        let eta = quantile_from_draws(&ws.draws, &ws.xis, &psi_matrix(&rep)?, cfg.alpha)?.eta;
        return Ok(TuneResult {
            lambda: zero,
            delta: eta / train.n() as f64,
            a_star: 0.0,
            b_star: 0.0,
            a_dagger: 0.0,
            objective_table: table,
            kappa_init: kappa.iter().copied().collect(),
        });
    };
    let (a_star, b_star) = (best.a, best.b);

    // Validation pass over a with b fixed.
    let mut pick: Option<(f64, f64, Vec<f64>, f64)> = None;
    let mut first_err = None;
    for cell in table.iter().filter(|c| c.b == b_star) {
        let lambda = lambda_from_family(&kappa, cell.a, b_star);
        let rep = Representation::new(theta.clone(), lambda.clone())?;
        let geom = psi_matrix(&rep)?;
        let delta = cell.eta / train.n() as f64;
        match fit_read_with_geometry(train, &rep, &geom, delta, solver) {
            Ok(est) => {
                let mse = val.mse(&est.beta);
                let better = match &pick {
                    None => true,
                    Some((a, m, _, _)) => mse < *m || (mse == *m && cell.a < *a),
                };
                if better {
                    pick = Some((cell.a, mse, lambda, delta));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((a_dagger, _, lambda, delta)) = pick else {
        return Err(first_err.unwrap_or_else(|| invalid("no tuning candidate could be fitted")));
    };
    Ok(TuneResult {
        lambda,
        delta,
        a_star,
        b_star,
        a_dagger,
        objective_table: table,
        kappa_init: kappa.iter().copied().collect(),
    })
}

/// `phi` at `beta` for a representation; convenience for callers that only
/// hold `(Theta, Lambda)`.
pub fn phi_at(beta: &DVector<f64>, rep: &Representation) -> Result<f64> {
    let geom = psi_matrix(rep)?;
    Ok(phi_with_geometry(beta, rep, &geom).value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{std_normal, substream};
    use approx::assert_relative_eq;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = substream(seed, &[0]);
        let x = DMatrix::from_fn(n, d, |_, _| std_normal(&mut rng));
        let b = DVector::from_fn(d, |_, _| std_normal(&mut rng));
        let y = &x * b + DVector::from_fn(n, |_, _| std_normal(&mut rng));
        Dataset::new(x, y).unwrap()
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, &[1]);
        DMatrix::from_fn(r, c, |_, _| std_normal(&mut rng))
    }

    #[test]
    fn kappa_orthonormal_projection() {
        let q = random_matrix(6, 3, 2).qr().q();
        let beta = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let k = kappa_init(&beta, &q, 1.0, 0.0).unwrap();
        assert_relative_eq!(k, q.transpose() * &beta, epsilon = 1e-12);
    }

    #[test]
    fn kappa_ridge_closed_form() {
        let theta = random_matrix(8, 4, 3);
        let beta = DVector::from_fn(8, |i, _| (i as f64).sin());
        let k = kappa_init(&beta, &theta, 1.0, 0.3).unwrap();
        let oracle = (theta.tr_mul(&theta) + DMatrix::identity(4, 4) * 0.3).try_inverse().unwrap() * theta.tr_mul(&beta);
        assert_relative_eq!(k, oracle, epsilon = 1e-8);
    }

    #[test]
    fn kappa_lasso_kill() {
        let theta = random_matrix(5, 3, 4);
        let beta = DVector::from_fn(5, |i, _| 1.0 + i as f64);
        let top = theta.tr_mul(&beta).amax();
        let k = kappa_init(&beta, &theta, 0.0, 2.0 * top).unwrap();
        assert_eq!(k, DVector::zeros(3));
        let k = kappa_init(&beta, &theta, 0.0, 1.9 * top).unwrap();
        assert!(k.amax() > 0.0);
    }

    #[test]
    fn kappa_rank_deficient_min_norm() {
        let col = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let theta = DMatrix::from_columns(&[col.clone(), col.clone()]);
        let beta = DVector::from_vec(vec![2.0, 4.0, 1.0]);
        let k = kappa_init(&beta, &theta, 1.0, 0.0).unwrap();
        assert_relative_eq!(k[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(k[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn v_n_matches_definition() {
        let data = random_data(30, 4, 5);
        let rep = Representation::new(random_matrix(4, 2, 6), vec![1.5, 0.2]).unwrap();
        let beta = DVector::from_vec(vec![0.1, 0.5, -0.3, 0.2]);
        let r = data.residuals(&beta);
        let mut acc = 0.0;
        for i in 0..data.n() {
            acc += phi_at(&(&beta * (-2.0 * r[i])), &rep).unwrap().powi(2);
        }
        let oracle = (acc / data.n() as f64).sqrt();
        assert_relative_eq!(v_n(&data, &rep, &beta).unwrap(), oracle, max_relative = 1e-10);

        let theta = random_matrix(4, 2, 7);
        let inside = &theta * DVector::from_vec(vec![0.3, -1.0]);
        let hard = Representation::uniform(theta, f64::INFINITY).unwrap();
        assert!(v_n(&data, &hard, &inside).unwrap().abs() < 1e-12);
        let fitted = Dataset::new(data.x().clone(), data.x() * &beta).unwrap();
        assert_eq!(v_n(&fitted, &rep, &beta).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = random_data(25, 4, 8);
        let rep = Representation::new(random_matrix(4, 2, 9), vec![2.0, f64::INFINITY]).unwrap();
        let mut rng = substream(10, &[]);
        for _ in 0..50 {
            let beta = DVector::from_fn(4, |_, _| std_normal(&mut rng));
            let g = grad_v_n(&data, &rep, &beta).unwrap();
            let h = 1e-6;
            let fd = DVector::from_fn(4, |j, _| {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[j] += h;
                dn[j] -= h;
                (v_n(&data, &rep, &up).unwrap() - v_n(&data, &rep, &dn).unwrap()) / (2.0 * h)
            });
            assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1e-3), "{g} vs {fd}");
        }
    }

    #[test]
    fn gradient_plain_norm_case() {
        let data = random_data(20, 3, 11);
        let beta = DVector::from_vec(vec![0.4, -0.2, 0.9]);
        let g = grad_v_n(&data, &Representation::none(3), &beta).unwrap();
        let r = data.residuals(&beta);
        let n = data.n() as f64;
        let rmse = (r.norm_squared() / n).sqrt();
        let manual = (&beta / beta.norm() * rmse - data.x().tr_mul(&r) * (beta.norm() / (n * rmse))) * 2.0;
        assert_relative_eq!(g, manual, epsilon = 1e-12);
        assert!(matches!(grad_v_n(&data, &Representation::none(3), &DVector::zeros(3)), Err(ReadError::NonDifferentiable(_))));
    }

    #[test]
    fn objective_matches_bias_form() {
        let data = random_data(60, 3, 12);
        let beta = fit_erm(&data).unwrap();
        let theta = random_matrix(3, 1, 13);
        let rep = Representation::uniform(theta.clone(), 4.0).unwrap();
        let j = lambda_objective(&data, &beta, &theta, &[4.0], 0.1, 500, 3).unwrap();
        let geom = psi_matrix(&rep).unwrap();
        let eta = crate::rwpi::select_delta(&data, &beta, &rep, 0.1, 500, 3).unwrap().eta;
        let sigma_inv = data.gram().try_inverse().unwrap();
        let pb = &geom.psi * &beta;
        let oracle = eta * 4.0 * data.mse(&beta) * pb.dot(&(&sigma_inv * &pb)) / geom.seminorm(&beta).powi(2);
        assert_relative_eq!(j, oracle, max_relative = 1e-8);
    }

    #[test]
    fn objective_infinite_when_fit_in_span() {
        let data = random_data(40, 3, 14);
        let beta = fit_erm(&data).unwrap();
        let theta = DMatrix::from_column_slice(3, 1, beta.as_slice());
        let j = lambda_objective(&data, &beta, &theta, &[f64::INFINITY], 0.1, 300, 1).unwrap();
        assert_eq!(j, f64::INFINITY);
    }

    #[test]
    fn family_conventions() {
        let k = DVector::from_vec(vec![0.0, 0.5, -2.0]);
        assert_eq!(lambda_from_family(&k, 3.0, 0.0), vec![3.0, 3.0, 3.0]);
        assert_eq!(lambda_from_family(&k, f64::INFINITY, 1.0), vec![0.0, f64::INFINITY, f64::INFINITY]);
        assert_eq!(lambda_from_family(&k, 2.0, 2.0), vec![0.0, 0.5, 8.0]);
    }

    #[test]
    fn tuning_is_reproducible() {
        let train = random_data(60, 5, 15);
        let val = random_data(60, 5, 16);
        let theta = random_matrix(5, 2, 17);
        let cfg = TuneConfig { L: 300, ..TuneConfig::default() };
        let a = tune_lambda(&train, &val, &theta, &cfg, 9).unwrap();
        let b = tune_lambda(&train, &val, &theta, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objective_table.len(), 28);
        assert!(a.lambda.iter().all(|l| *l >= 0.0));
    }
}
