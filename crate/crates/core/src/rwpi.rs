//! Profile-function machinery for linear regression: the matrices
//! `Xi_i = e_i I - beta x_i^T`, the conjugate `psi*`, Monte Carlo radius
//! selection, and ellipsoidal confidence regions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, Representation};
use crate::error::{invalid, ReadError, Result};
use crate::geometry::{psi_matrix, Geometry};
use crate::linalg::{min_eigenvalue, sqrt_psd, sym_eigen, symmetrize};
use crate::rng::{std_normal, substream};

/// Relative eigenvalue cut used when inverting `M_N`.
const EIG_REL_TOL: f64 = 1e-12;
/// A vector counts as outside the range of a singular form when its
/// orthogonal component exceeds this fraction of its norm.
const RANGE_TOL: f64 = 1e-8;

/// The matrices `Xi_i = (y_i - x_i^T beta) I - beta x_i^T`, stored implicitly
/// through the residuals and the design.
#[derive(Debug, Clone)]
pub struct XiSet {
    residuals: DVector<f64>,
    x: DMatrix<f64>,
    pub beta_ref: DVector<f64>,
}

impl XiSet {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn residuals(&self) -> &DVector<f64> {
        &self.residuals
    }

    /// Materializes `Xi_i`.
    pub fn xi(&self, i: usize) -> DMatrix<f64> {
        let d = self.beta_ref.len();
        let xi = self.x.row(i).transpose();
        DMatrix::identity(d, d) * self.residuals[i] - &self.beta_ref * xi.transpose()
    }

    /// `M_N = (1/N) sum_i Xi_i^T Psi Xi_i`, assembled from sufficient statistics:
    /// `mean(e^2) Psi - Psi beta s^T - s beta^T Psi + (beta^T Psi beta) X^T X / N`
    /// with `s = (1/N) sum_i e_i x_i`.
    pub fn profile_matrix(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.len() as f64;
        let e = &self.residuals;
        let mean_e2 = e.norm_squared() / n;
        let s = self.x.tr_mul(e) / n;
        let pb = psi * &self.beta_ref;
        let bpb = self.beta_ref.dot(&pb);
        let gram = self.x.tr_mul(&self.x) / n;
        let mut m = psi * mean_e2 - &pb * s.transpose() - &s * pb.transpose() + gram * bpb;
        symmetrize(&mut m);
        m
    }
}

pub fn build_xis(data: &Dataset, beta: &DVector<f64>) -> Result<XiSet> {
    data.check_beta(beta)?;
    Ok(XiSet { residuals: data.residuals(beta), x: data.x().clone(), beta_ref: beta.clone() })
}

/// Quadratic form `h -> h^T M^+ h` with `+inf` off the range of `M`.
#[derive(Debug, Clone)]
pub struct ConjugateForm {
    vals: DVector<f64>,
    vecs: DMatrix<f64>,
    cut: f64,
}

impl ConjugateForm {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (vals, vecs) = sym_eigen(m);
        let top = vals.iter().copied().fold(0.0_f64, f64::max);
        Self { vals, vecs, cut: EIG_REL_TOL * top }
    }

    pub fn eval(&self, h: &DVector<f64>) -> f64 {
        let coords = self.vecs.tr_mul(h);
        let mut value = 0.0;
        let mut outside = 0.0;
        for (c, v) in coords.iter().zip(self.vals.iter()) {
            if *v > self.cut {
                value += c * c / v;
            } else {
                outside += c * c;
            }
        }
        if outside.sqrt() > RANGE_TOL * h.norm() {
            return f64::INFINITY;
        }
        value
    }
}

/// `psi*(h) = h^T M_N^+ h`, the value of
/// `min (1/N) sum_i u_i^T Psi^{-1} u_i` subject to `(1/N) sum_i Xi_i^T u_i = h`.
pub fn psi_star(h: &DVector<f64>, xis: &XiSet, geom: &Geometry) -> f64 {
    ConjugateForm::new(&xis.profile_matrix(&geom.psi)).eval(h)
}

#[derive(Debug, Clone, PartialEq)]
#[allow(non_snake_case)]
pub struct QuantileEstimate {
    pub eta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub L: usize,
    pub samples_infinite_fraction: f64,
}

/// Gaussian draws `h_j ~ N(0, Sigma_h)` where `Sigma_h` is the sample covariance
/// of the scores `e_i x_i`. Reusing one set of draws across several
/// representations gives common random numbers.
#[derive(Debug, Clone)]
pub struct ScoreDraws {
    /// `d x L`, one draw per column.
    pub draws: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

/// Sample covariance (denominator `N - 1`) of `e_i x_i`.
pub fn score_covariance(data: &Dataset, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    data.check_beta(beta)?;
    let n = data.n();
    if n < 2 {
        return Err(invalid("score covariance needs at least two observations"));
    }
    let e = data.residuals(beta);
    let mut scores = data.x().clone();
    for (i, mut row) in scores.row_iter_mut().enumerate() {
        row *= e[i];
    }
    let mean = scores.row_mean();
    for mut row in scores.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = scores.tr_mul(&scores) / (n as f64 - 1.0);
    symmetrize(&mut cov);
    let floor = min_eigenvalue(&cov);
    if floor < -1e-10 * cov.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(ReadError::NotPsd(floor));
    }
    Ok(cov)
}

pub fn score_draws(data: &Dataset, beta: &DVector<f64>, count: usize, seed: u64) -> Result<ScoreDraws> {
    let covariance = score_covariance(data, beta)?;
    let root = sqrt_psd(&covariance);
    let d = data.d();
    let cols: Vec<DVector<f64>> = (0..count)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, &[j as u64]);
            let z = DVector::from_fn(d, |_, _| std_normal(&mut rng));
            &root * z
        })
        .collect();
    let draws = if cols.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&cols) };
    Ok(ScoreDraws { draws, covariance })
}

/// 1-based index of the order statistic used as the `(1 - alpha)` quantile.
pub fn quantile_rank(alpha: f64, count: usize) -> usize {
    let k = ((1.0 - alpha) * count as f64 - 1e-9).ceil() as usize;
    k.clamp(1, count)
}

/// `ceil((1 - alpha) L)`-th order statistic of `values`, with `+inf` sorting last.
pub fn empirical_quantile(values: &mut [f64], alpha: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[quantile_rank(alpha, values.len()) - 1]
}

fn check_alpha(alpha: f64, count: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if count < 100 {
        return Err(invalid(format!("need at least 100 Monte Carlo draws, got {count}")));
    }
    Ok(())
}

/// Radius selection from precomputed draws; `xis` must be built at the same
/// `beta` the draws came from.
pub fn quantile_from_draws(draws: &ScoreDraws, xis: &XiSet, geom: &Geometry, alpha: f64) -> Result<QuantileEstimate> {
    let count = draws.draws.ncols();
    check_alpha(alpha, count)?;
    let form = ConjugateForm::new(&xis.profile_matrix(&geom.psi));
    let mut values: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|j| form.eval(&draws.draws.column(j).into_owned()))
        .collect();
    let infinite = values.iter().filter(|v| v.is_infinite()).count();
    let eta = empirical_quantile(&mut values, alpha);
    Ok(QuantileEstimate {
        eta,
        delta: eta / xis.len() as f64,
        alpha,
        L: count,
        samples_infinite_fraction: infinite as f64 / count as f64,
    })
}

/// Picks the radius `delta = eta / N` where `eta` is the simulated
/// `(1 - alpha)` quantile of `psi*(h)`, `h ~ N(0, Cov(e_i x_i))`.
pub fn select_delta(
    data: &Dataset,
    beta_erm: &DVector<f64>,
    rep: &Representation,
    alpha: f64,
    count: usize,
    seed: u64,
) -> Result<QuantileEstimate> {
    check_alpha(alpha, count)?;
    check_rep(data, rep)?;
    let geom = psi_matrix(rep)?;
    let xis = build_xis(data, beta_erm)?;
    let draws = score_draws(data, beta_erm, count, seed)?;
    quantile_from_draws(&draws, &xis, &geom, alpha)
}

fn check_rep(data: &Dataset, rep: &Representation) -> Result<()> {
    if rep.d() != data.d() {
        return Err(ReadError::DimensionMismatch {
            what: "prior matrix rows vs covariate dimension",
            expected: data.d(),
            found: rep.d(),
        });
    }
    Ok(())
}

/// Ellipsoidal confidence region
/// `{u : (S (u - c))^T Gamma^+ (S (u - c)) <= eta / N}`.
#[derive(Debug, Clone)]
#[allow(non_snake_case)]
pub struct Region {
    pub center: DVector<f64>,
    pub Sigma_hat: DMatrix<f64>,
    pub GammaTilde: DMatrix<f64>,
    pub eta: f64,
    pub sigma2_hat: f64,
    pub n: usize,
    /// `M_N` at the center; drives the polyhedral envelope.
    pub profile: DMatrix<f64>,
    gamma_form: ConjugateForm,
}

impl Region {
    pub fn threshold(&self) -> f64 {
        self.eta / self.n as f64
    }

    /// `(S (u - c))^T Gamma^+ (S (u - c))`, `+inf` off the affine slice.
    pub fn statistic(&self, u: &DVector<f64>) -> f64 {
        self.gamma_form.eval(&(&self.Sigma_hat * (u - &self.center)))
    }

    /// Points off the affine slice (infinite statistic) are never inside, even
    /// when `eta` itself is infinite.
    pub fn contains(&self, u: &DVector<f64>) -> bool {
        let s = self.statistic(u);
        s.is_finite() && s <= self.threshold()
    }

    /// Membership in the set `{u : psi*(S (u - c)) <= eta / N}` built from the
    /// empirical profile matrix; this is the set the envelope bounds.
    pub fn profile_contains(&self, u: &DVector<f64>) -> bool {
        let s = ConjugateForm::new(&self.profile).eval(&(&self.Sigma_hat * (u - &self.center)));
        s.is_finite() && s <= self.threshold()
    }
}

pub fn confidence_region(
    data: &Dataset,
    beta_erm: &DVector<f64>,
    rep: &Representation,
    alpha: f64,
    count: usize,
    seed: u64,
) -> Result<Region> {
    check_rep(data, rep)?;
    let (n, d) = (data.n(), data.d());
    if n <= d {
        return Err(invalid("confidence region needs N > d"));
    }
    let quant = select_delta(data, beta_erm, rep, alpha, count, seed)?;
    let geom = psi_matrix(rep)?;
    let sigma_hat = data.gram();
    let sigma2_hat = data.residuals(beta_erm).norm_squared() / (n - d) as f64;
    let norm2 = geom.seminorm(beta_erm).powi(2);
    let mut gamma = &geom.psi * sigma2_hat + &sigma_hat * norm2;
    symmetrize(&mut gamma);
    let profile = build_xis(data, beta_erm)?.profile_matrix(&geom.psi);
    Ok(Region {
        center: beta_erm.clone(),
        Sigma_hat: sigma_hat,
        gamma_form: ConjugateForm::new(&gamma),
        GammaTilde: gamma,
        eta: quant.eta,
        sigma2_hat,
        n,
        profile,
    })
}

/// Half-space `{u : normal^T u <= offset}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn contains(&self, u: &DVector<f64>) -> bool {
        self.normal.dot(u) <= self.offset
    }
}

/// `count` directions drawn uniformly on the unit sphere; direction `k` comes
/// from its own substream, so a longer list extends a shorter one.
pub fn unit_directions(d: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    (0..count)
        .map(|k| {
            let mut rng = substream(seed, &[k as u64]);
            loop {
                let v = DVector::from_fn(d, |_, _| std_normal(&mut rng));
                let norm = v.norm();
                if norm > 0.0 {
                    break v / norm;
                }
            }
        })
        .collect()
}

/// Supporting half-spaces of the profile set in the given directions:
/// `v^T u <= v^T c + 2 sqrt((eta / N) psi(S^{-1} v))` with
/// `psi(x) = x^T M_N x / 4`.
pub fn support_envelope_with_directions(region: &Region, directions: &[DVector<f64>]) -> Result<Vec<HalfSpace>> {
    let d = region.center.len();
    let chol = region
        .Sigma_hat
        .clone()
        .cholesky()
        .ok_or(ReadError::SingularDesign { rank: 0, dim: d })?;
    directions
        .iter()
        .map(|v| {
            if v.len() != d {
                return Err(ReadError::DimensionMismatch { what: "direction length", expected: d, found: v.len() });
            }
            let x = chol.solve(v);
            let psi = 0.25 * x.dot(&(&region.profile * &x)).max(0.0);
            let reach = if region.eta.is_infinite() { f64::INFINITY } else { 2.0 * (region.threshold() * psi).sqrt() };
            Ok(HalfSpace { normal: v.clone(), offset: v.dot(&region.center) + reach })
        })
        .collect()
}

pub fn support_envelope(region: &Region, count: usize, seed: u64) -> Result<Vec<HalfSpace>> {
    let d = region.center.len();
    if count < d + 1 {
        return Err(invalid(format!("envelope needs at least d + 1 = {} directions", d + 1)));
    }
    support_envelope_with_directions(region, &unit_directions(d, count, seed))
}

#[cfg(test)]
pub(crate) fn gamma_pinv(region: &Region) -> DMatrix<f64> {
    crate::linalg::pinv_sym(&region.GammaTilde, EIG_REL_TOL)
}
