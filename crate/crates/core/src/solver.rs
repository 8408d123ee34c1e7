//! Estimators: ordinary least squares, the representation-aware DRO fit at
//! `p = q = 2`, least squares restricted to `span(Theta)`, and a slow
//! first-order reference solver used to check the fast path.
//!
//! The DRO objective is
//!
//! ```text
//! f(beta) = ||y - X beta||_2 / sqrt(N) + sqrt(delta) * ||beta||_Psi
//! ```
//!
//! Away from its kinks the stationarity condition reads
//! `X^T r = mu Psi beta` with `mu = sqrt(delta N) ||r|| / ||beta||_Psi`, so every
//! candidate solution is a generalized ridge fit `beta(mu) = (X^T X + mu Psi)^{-1} X^T y`.
//! [`fit_read`] diagonalizes the pencil `(X^T X, Psi)` once and then solves
//! the scalar equation in `mu` by bisection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Representation};
use crate::error::{invalid, ReadError, Result};
use crate::geometry::{psi_matrix, ridge_kappa, Geometry, RANK_TOL};
use crate::linalg::{orthonormal_basis, sym_eigen, symmetrize};

/// Upper limit for the bracket on `mu`; beyond it the solution is taken to sit
/// on the null space of `Psi`.
pub const MU_CAP: f64 = 1e16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub bracket_growth: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, bracket_growth: 10.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid("solver tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("solver max_iter must be at least 1"));
        }
        if !(self.bracket_growth > 1.0) {
            return Err(invalid("bracket_growth must exceed 1"));
        }
        Ok(())
    }
}

/// Result of [`fit_read`].
#[derive(Debug, Clone)]
pub struct ReadEstimate {
    pub beta: DVector<f64>,
    pub kappa: DVector<f64>,
    pub delta: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Ridge multiplier at the fixed point; `0` for the plain least-squares
    /// fit and `+inf` when the solution lies in the null space of `Psi`.
    pub mu: f64,
}

fn singular_rank_check(x: &DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let d = x.ncols();
    let svd = x.clone().svd(true, true);
    let trace = x.norm_squared();
    let cut = 1e-12 * trace / d as f64;
    let rank = svd.singular_values.iter().filter(|s| *s * *s > cut).count();
    if rank < d || x.nrows() < d {
        return Err(ReadError::SingularDesign { rank, dim: d });
    }
    Ok(svd)
}

/// Ordinary least squares via the singular value decomposition of `X`.
pub fn fit_erm(data: &Dataset) -> Result<DVector<f64>> {
    let svd = singular_rank_check(data.x())?;
    Ok(svd.solve(data.y(), 0.0).expect("both factors requested"))
}

/// Least squares over `span(basis)`, where `basis` has orthonormal columns.
pub(crate) fn fit_on_basis(data: &Dataset, basis: &DMatrix<f64>) -> Result<DVector<f64>> {
    if basis.ncols() == 0 {
        return Ok(DVector::zeros(data.d()));
    }
    let xo = data.x() * basis;
    let svd = singular_rank_check(&xo)?;
    let coef = svd.solve(data.y(), 0.0).expect("both factors requested");
    Ok(basis * coef)
}

/// Least squares with `beta` constrained to the column span of `theta`.
pub fn fit_restricted(data: &Dataset, theta: &DMatrix<f64>) -> Result<DVector<f64>> {
    if theta.nrows() != data.d() {
        return Err(ReadError::DimensionMismatch {
            what: "prior matrix rows vs covariate dimension",
            expected: data.d(),
            found: theta.nrows(),
        });
    }
    let basis = orthonormal_basis(theta, RANK_TOL * theta.norm());
    fit_on_basis(data, &basis)
}

/// `||y - X beta|| / sqrt(N) + sqrt(delta) ||beta||_Psi` with `0 * inf = 0`.
pub fn objective_with_geometry(data: &Dataset, geom: &Geometry, delta: f64, beta: &DVector<f64>) -> f64 {
    let loss = data.residuals(beta).norm() / (data.n() as f64).sqrt();
    let pen = geom.seminorm(beta);
    if delta == 0.0 || pen == 0.0 {
        return loss;
    }
    loss + delta.sqrt() * pen
}

pub fn objective_value(data: &Dataset, rep: &Representation, delta: f64, beta: &DVector<f64>) -> Result<f64> {
    check_inputs(data, rep, delta)?;
    data.check_beta(beta)?;
    let geom = psi_matrix(rep)?;
    Ok(objective_with_geometry(data, &geom, delta, beta))
}

fn check_inputs(data: &Dataset, rep: &Representation, delta: f64) -> Result<()> {
    if delta.is_nan() || delta < 0.0 {
        return Err(invalid(format!("radius must be nonnegative, got {delta}")));
    }
    if rep.d() != data.d() {
        return Err(ReadError::DimensionMismatch {
            what: "prior matrix rows vs covariate dimension",
            expected: data.d(),
            found: rep.d(),
        });
    }
    Ok(())
}

/// The generalized ridge path `beta(mu) = (X^T X + mu Psi)^{-1} X^T y` in the
/// basis that diagonalizes both matrices.
struct RidgePath {
    /// `L^{-T} Q`, so that `G^T X^T X G = I` and `G^T Psi G = diag(eig)`.
    g: DMatrix<f64>,
    w: DVector<f64>,
    eig: DVector<f64>,
    null: Vec<bool>,
}

impl RidgePath {
    fn new(data: &Dataset, geom: &Geometry) -> Result<Self> {
        let d = data.d();
        let mut gram = data.x().tr_mul(data.x());
        symmetrize(&mut gram);
        let chol = match gram.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = 1e-12 * gram.trace() / d as f64;
                let mut jittered = gram.clone();
                for i in 0..d {
                    jittered[(i, i)] += jitter;
                }
                jittered
                    .cholesky()
                    .ok_or(ReadError::SingularDesign { rank: 0, dim: d })?
            }
        };
        let l = chol.l();
        let left = l.solve_lower_triangular(&geom.psi).expect("cholesky factor is nonsingular");
        let mut c = l
            .solve_lower_triangular(&left.transpose())
            .expect("cholesky factor is nonsingular");
        symmetrize(&mut c);
        let (mut eig, q) = sym_eigen(&c);
        let r = geom.null_rank();
        let mut null = vec![false; d];
        for j in 0..d {
            if j < r {
                null[j] = true;
                eig[j] = 0.0;
            } else {
                eig[j] = eig[j].max(0.0);
            }
        }
        let g = l
            .transpose()
            .solve_upper_triangular(&q)
            .expect("cholesky factor is nonsingular");
        let w = g.tr_mul(&data.x().tr_mul(data.y()));
        Ok(Self { g, w, eig, null })
    }

    fn beta(&self, mu: f64) -> DVector<f64> {
        let scaled = DVector::from_iterator(
            self.w.len(),
            self.w.iter().zip(self.eig.iter()).map(|(w, e)| w / (1.0 + mu * e)),
        );
        &self.g * scaled
    }

    /// `mu * ||beta(mu)||_Psi`.
    fn scaled_seminorm(&self, mu: f64) -> f64 {
        self.w
            .iter()
            .zip(self.eig.iter())
            .map(|(w, e)| {
                let f = mu / (1.0 + mu * e);
                e * w * w * f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Least squares restricted to the null space of `Psi`.
    fn null_fit(&self) -> DVector<f64> {
        let masked = DVector::from_iterator(
            self.w.len(),
            self.w.iter().zip(self.null.iter()).map(|(w, &n)| if n { *w } else { 0.0 }),
        );
        &self.g * masked
    }

    /// Dual seminorm `||Psi^{+/2} X^T r||` of the gradient at [`Self::null_fit`].
    fn null_fit_dual(&self) -> f64 {
        self.w
            .iter()
            .zip(self.eig.iter())
            .zip(self.null.iter())
            .filter(|(_, &n)| !n)
            .map(|((w, e), _)| if *e > 0.0 { w * w / e } else if *w == 0.0 { 0.0 } else { f64::INFINITY })
            .sum::<f64>()
            .sqrt()
    }
}

/// Fits the representation-aware DRO estimator at radius `delta`.
///
/// `delta = 0` returns the least-squares fit. `delta = +inf` forces
/// `||beta||_Psi = 0`, i.e. least squares over the span of the infinitely
/// weighted columns (zero when there are none).
pub fn fit_read(data: &Dataset, rep: &Representation, delta: f64, cfg: &SolverConfig) -> Result<ReadEstimate> {
    check_inputs(data, rep, delta)?;
    let geom = psi_matrix(rep)?;
    fit_read_with_geometry(data, rep, &geom, delta, cfg)
}

pub fn fit_read_with_geometry(
    data: &Dataset,
    rep: &Representation,
    geom: &Geometry,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<ReadEstimate> {
    check_inputs(data, rep, delta)?;
    cfg.validate()?;
    let finish = |beta: DVector<f64>, iterations: usize, mu: f64| {
        let objective = objective_with_geometry(data, geom, delta, &beta);
        ReadEstimate { kappa: ridge_kappa(rep, &beta), beta, delta, objective, iterations, converged: true, mu }
    };

    if delta == 0.0 {
        return Ok(finish(fit_erm(data)?, 0, 0.0));
    }
    if delta.is_infinite() {
        let beta = fit_on_basis(data, &geom.infinite_block_basis)?;
        return Ok(finish(beta, 0, f64::INFINITY));
    }

    let path = RidgePath::new(data, geom)?;
    let target = (delta * data.n() as f64).sqrt();

    // Kink at the null space of Psi (the origin when Psi is nonsingular).
    let corner = path.null_fit();
    let corner_res = data.residuals(&corner).norm();
    if corner_res == 0.0 || path.null_fit_dual() <= target * corner_res {
        return Ok(finish(corner, 0, f64::INFINITY));
    }

    let gap = |mu: f64| path.scaled_seminorm(mu) - target * data.residuals(&path.beta(mu)).norm();

    let mut iterations = 0usize;
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while gap(hi) <= 0.0 {
        lo = hi;
        hi *= cfg.bracket_growth;
        iterations += 1;
        if hi > MU_CAP {
            return Ok(finish(corner, iterations, f64::INFINITY));
        }
    }
    loop {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if iterations >= cfg.max_iter {
            return Err(ReadError::NonConvergence {
                iterations,
                residual: gap(mid).abs(),
                last_iterate: path.beta(mid),
            });
        }
        iterations += 1;
        if gap(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= cfg.tol * hi {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    Ok(finish(path.beta(mu), iterations, mu))
}

/// Slow reference minimizer of the DRO objective for small problems.
///
/// Accelerated proximal gradient on the loss term with backtracking and
/// adaptive restart; the proximal map of `t ||.||_Psi` is evaluated exactly
/// in the eigenbasis of `Psi` through a scalar root find. Returns the best
/// iterate once the objective stops changing by more than `tol`.
pub fn fit_read_reference(data: &Dataset, rep: &Representation, delta: f64, tol: f64) -> Result<DVector<f64>> {
    check_inputs(data, rep, delta)?;
    if data.d() > 20 {
        return Err(invalid("reference solver is limited to d <= 20"));
    }
    let geom = psi_matrix(rep)?;
    let (vals, vecs) = sym_eigen(&geom.psi);
    let top = vals.iter().copied().fold(0.0_f64, f64::max);
    let vals = vals.map(|v| if v > 1e-14 * top { v } else { 0.0 });
    let sqrt_n = (data.n() as f64).sqrt();
    let weight = delta.sqrt();
    let x = data.x();
    let y = data.y();

    let loss = |b: &DVector<f64>| data.residuals(b).norm() / sqrt_n;
    let total = |b: &DVector<f64>| objective_with_geometry(data, &geom, delta, b);
    let prox = |v: &DVector<f64>, tau: f64| -> DVector<f64> {
        let w = vecs.tr_mul(v);
        let range_mass: f64 = w.iter().zip(vals.iter()).filter(|(_, e)| **e > 0.0).map(|(w, e)| w * w / e).sum();
        if tau == 0.0 {
            return v.clone();
        }
        let z = if range_mass <= tau * tau {
            w.iter().zip(vals.iter()).map(|(w, e)| if *e > 0.0 { 0.0 } else { *w }).collect::<Vec<_>>()
        } else {
            let lhs = |s: f64| -> f64 {
                w.iter().zip(vals.iter()).map(|(w, e)| e * w * w / (s + tau * e).powi(2)).sum()
            };
            let mut lo = 0.0;
            let mut hi = w.iter().zip(vals.iter()).map(|(w, e)| e * w * w).sum::<f64>().sqrt().max(1e-300);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if lhs(mid) > 1.0 { lo = mid } else { hi = mid }
                if hi - lo <= 1e-16 * hi {
                    break;
                }
            }
            let s = 0.5 * (lo + hi);
            w.iter().zip(vals.iter()).map(|(w, e)| w * s / (s + tau * e)).collect()
        };
        &vecs * DVector::from_vec(z)
    };

    let mut beta = DVector::zeros(data.d());
    let mut f = total(&beta);
    let mut point = beta.clone();
    let mut t = 1.0_f64;
    let mut lip = x.norm_squared() / (sqrt_n * y.norm().max(1e-12));
    let mut quiet = 0usize;
    let mut restarted = false;
    for _ in 0..200_000 {
        let r = y - x * &point;
        let nr = r.norm();
        let grad = if nr > 0.0 { -(x.tr_mul(&r)) / (sqrt_n * nr) } else { DVector::zeros(data.d()) };
        let base = nr / sqrt_n;
        let mut cand;
        loop {
            cand = prox(&(&point - &grad / lip), weight / lip);
            let diff = &cand - &point;
            if loss(&cand) <= base + grad.dot(&diff) + 0.5 * lip * diff.norm_squared() + 1e-15 * base {
                break;
            }
            lip *= 2.0;
        }
        let fc = total(&cand);
        if fc > f {
            if restarted {
                // A plain proximal step from the best iterate failed to
                // improve: only rounding is left.
                break;
            }
            // Momentum overshoot: restart from the best iterate.
            point = beta.clone();
            t = 1.0;
            restarted = true;
            continue;
        }
        restarted = false;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        point = &cand + (&cand - &beta) * ((t - 1.0) / t_next);
        let change = f - fc;
        beta = cand;
        f = fc;
        t = t_next;
        lip *= 0.95;
        if change <= tol * f.abs().max(1.0) {
            quiet += 1;
            if quiet >= 50 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Ok(beta)
}
