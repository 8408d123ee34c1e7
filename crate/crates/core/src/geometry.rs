//! Transport-cost geometry: the matrix `Psi = (I + Theta Lambda Theta^T)^{-1}`,
//! the regularizer `phi` it induces, and the representation-aware cost.
//!
//! Infinite alignment weights are handled by their exact limit. If `O` is an
//! orthonormal basis of the columns with `lambda = inf` and `P = I - O O^T`,
//! then with `T = P Theta_F` over the finite, positive weights
//!
//! ```text
//! Psi = P - T (T^T T + Lambda_F^{-1})^{-1} T^T
//! ```
//!
//! which reduces to the Woodbury form `I - Theta (Theta^T Theta + Lambda^{-1})^{-1} Theta^T`
//! when every weight is finite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Representation;
use crate::error::{invalid, Result};
use crate::linalg::{lstsq, orthonormal_basis, quad_form, symmetrize};

/// Relative tolerance used to detect dependent columns of `Theta_inf`.
pub const RANK_TOL: f64 = 1e-10;
/// Inner products below this are treated as zero when `lambda = inf`.
pub const INF_PROJECTION_TOL: f64 = 1e-12;

/// Norm index for the supported dual pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormIndex {
    One,
    Two,
    Inf,
}

impl NormIndex {
    pub fn norm(self, v: &DVector<f64>) -> f64 {
        match self {
            NormIndex::One => v.iter().map(|x| x.abs()).sum(),
            NormIndex::Two => v.norm(),
            NormIndex::Inf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        }
    }

    /// Hölder conjugate.
    pub fn dual(self) -> Self {
        match self {
            NormIndex::One => NormIndex::Inf,
            NormIndex::Two => NormIndex::Two,
            NormIndex::Inf => NormIndex::One,
        }
    }
}

/// `Psi` together with the null-space information coming from infinite weights.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub psi: DMatrix<f64>,
    /// Orthonormal `d x r` basis of the span of the columns with `lambda = inf`.
    pub infinite_block_basis: DMatrix<f64>,
    pub is_seminorm: bool,
}

impl Geometry {
    pub fn d(&self) -> usize {
        self.psi.nrows()
    }

    /// Dimension `r` of the null space of `Psi`.
    pub fn null_rank(&self) -> usize {
        self.infinite_block_basis.ncols()
    }

    /// `||beta||_Psi`.
    pub fn seminorm(&self, beta: &DVector<f64>) -> f64 {
        quad_form(&self.psi, beta).max(0.0).sqrt()
    }
}

/// Value of `phi_{p,Lambda}(beta)` and the minimizing coefficients.
#[derive(Debug, Clone)]
pub struct PhiValue {
    pub value: f64,
    pub kappa: DVector<f64>,
}

/// Builds `Psi_Lambda` for a representation.
pub fn psi_matrix(rep: &Representation) -> Result<Geometry> {
    let d = rep.d();
    let theta_scale = rep.theta().norm();

    let (_, theta_inf) = rep.columns_where(|l| l.is_infinite());
    let basis = orthonormal_basis(&theta_inf, RANK_TOL * theta_scale);
    let projector = DMatrix::identity(d, d) - &basis * basis.transpose();

    let (finite_idx, theta_fin) = rep.columns_where(|l| l.is_finite() && l > 0.0);
    let mut psi = projector.clone();
    if !finite_idx.is_empty() {
        let t = &projector * theta_fin;
        let mut inner = t.tr_mul(&t);
        for (k, &m) in finite_idx.iter().enumerate() {
            inner[(k, k)] += 1.0 / rep.lambda()[m];
        }
        let solved = match inner.clone().cholesky() {
            Some(ch) => ch.solve(&t.transpose()),
            None => {
                let pinv = crate::linalg::pinv_sym(&inner, 1e-14);
                pinv * t.transpose()
            }
        };
        psi -= &t * solved;
    }
    symmetrize(&mut psi);
    let is_seminorm = basis.ncols() > 0;
    Ok(Geometry { psi, infinite_block_basis: basis, is_seminorm })
}

/// Minimizer of `||beta - Theta kappa||_2^2 + ||kappa||^2_{Lambda^{-1}}`.
pub(crate) fn ridge_kappa(rep: &Representation, beta: &DVector<f64>) -> DVector<f64> {
    let (idx, theta_a) = rep.columns_where(|l| l > 0.0);
    let mut kappa = DVector::zeros(rep.m());
    if idx.is_empty() {
        return kappa;
    }
    let mut gram = theta_a.tr_mul(&theta_a);
    for (k, &m) in idx.iter().enumerate() {
        let l = rep.lambda()[m];
        if l.is_finite() {
            gram[(k, k)] += 1.0 / l;
        }
    }
    let rhs = theta_a.tr_mul(beta);
    let sol = lstsq(&gram, &rhs, 1e-13);
    for (k, &m) in idx.iter().enumerate() {
        kappa[m] = sol[k];
    }
    kappa
}

/// `phi_{2,Lambda}(beta)` given a precomputed geometry.
pub fn phi_with_geometry(beta: &DVector<f64>, rep: &Representation, geom: &Geometry) -> PhiValue {
    PhiValue { value: geom.seminorm(beta), kappa: ridge_kappa(rep, beta) }
}

/// `phi_{p,Lambda}(beta)`.
///
/// `p = 2` uses the closed form `sqrt(beta^T Psi beta)`. For `p` in `{1, inf}` the
/// inner minimization over `kappa` is solved numerically (see
/// [`phi_general`]); that path is a standalone routine and is not used by
/// the estimators.
pub fn phi(beta: &DVector<f64>, rep: &Representation, p: NormIndex) -> Result<PhiValue> {
    if beta.len() != rep.d() {
        return Err(invalid("coefficient length does not match the representation dimension"));
    }
    if !beta.iter().all(|v| v.is_finite()) {
        return Err(invalid("coefficients must be finite"));
    }
    match p {
        NormIndex::Two => {
            let geom = psi_matrix(rep)?;
            Ok(phi_with_geometry(beta, rep, &geom))
        }
        _ => Ok(phi_general(beta, rep, p)),
    }
}

/// Representation-aware cost `||u||_q^2 + sum_m lambda_m (theta_m^T u)^2`,
/// returning `+inf` when an infinite weight meets a nonzero projection.
pub fn cost_c(u: &DVector<f64>, rep: &Representation, q: NormIndex) -> f64 {
    let mut total = q.norm(u).powi(2);
    for (m, &l) in rep.lambda().iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let ip = rep.theta().column(m).dot(u);
        if l.is_infinite() {
            if ip.abs() > INF_PROJECTION_TOL {
                return f64::INFINITY;
            }
        } else {
            total += l * ip * ip;
        }
    }
    total
}

const PHI_TOL: f64 = 1e-8;
const PHI_MAX_ITER: usize = 5000;

/// Numerical `phi_{p,Lambda}` for `p` in `{1, inf}`.
///
/// The polyhedral norm is replaced by a smooth upper approximation
/// (pseudo-Huber for `p = 1`, log-sum-exp for `p = inf`) whose width is shrunk
/// geometrically; each level is minimized by damped Newton steps, warm-started
/// from the `p = 2` ridge coefficients. The returned value is the exact
/// objective at the best candidate, so it never exceeds `||beta||_p`.
pub fn phi_general(beta: &DVector<f64>, rep: &Representation, p: NormIndex) -> PhiValue {
    let (idx, theta_a) = rep.columns_where(|l| l > 0.0);
    let d = rep.d();
    let scale = p.norm(beta);
    if idx.is_empty() || scale == 0.0 {
        return PhiValue { value: scale, kappa: DVector::zeros(rep.m()) };
    }
    let dinv = DVector::from_iterator(
        idx.len(),
        idx.iter().map(|&m| {
            let l = rep.lambda()[m];
            if l.is_infinite() { 0.0 } else { 1.0 / l }
        }),
    );
    let exact = |k: &DVector<f64>| -> f64 {
        let r = beta - &theta_a * k;
        p.norm(&r).powi(2) + k.iter().zip(dinv.iter()).map(|(a, b)| b * a * a).sum::<f64>()
    };

    let start_full = ridge_kappa(rep, beta);
    let start = DVector::from_iterator(idx.len(), idx.iter().map(|&m| start_full[m]));

    let mut kappa = start.clone();
    let mut width = 0.1 * scale;
    let final_width = PHI_TOL * 0.1 * scale / d as f64;
    let mut iters = 0usize;
    while iters < PHI_MAX_ITER {
        let smooth = Smoothed { p, width, theta: &theta_a, beta, dinv: &dinv };
        for _ in 0..100 {
            iters += 1;
            let (f0, grad, hess) = smooth.eval(&kappa);
            let ridge = 1e-12 * (hess.trace().abs() + 1.0);
            let mut h = hess;
            for i in 0..h.nrows() {
                h[(i, i)] += ridge;
            }
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => lstsq(&h, &(-&grad), 1e-14),
            };
            let slope = grad.dot(&step);
            if !(slope < 0.0) || slope.abs() < 1e-30 {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let cand = &kappa + &step * t;
                if smooth.value(&cand) <= f0 + 1e-4 * t * slope {
                    kappa = cand;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted || (t * step.norm()) <= 1e-13 * (1.0 + kappa.norm()) {
                break;
            }
            if iters >= PHI_MAX_ITER {
                break;
            }
        }
        if width <= final_width {
            break;
        }
        width = (width * 0.1).max(final_width);
    }

    let zero = DVector::zeros(idx.len());
    let best = [kappa, start, zero]
        .into_iter()
        .map(|k| (exact(&k), k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("three candidates");
    let mut full = DVector::zeros(rep.m());
    for (k, &m) in idx.iter().enumerate() {
        full[m] = best.1[k];
    }
    PhiValue { value: best.0.max(0.0).sqrt(), kappa: full }
}

struct Smoothed<'a> {
    p: NormIndex,
    width: f64,
    theta: &'a DMatrix<f64>,
    beta: &'a DVector<f64>,
    dinv: &'a DVector<f64>,
}

impl Smoothed<'_> {
    fn norm_parts(&self, r: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = r.len();
        let w = self.width;
        match self.p {
            NormIndex::One => {
                let mut s = 0.0;
                let mut g = DVector::zeros(n);
                let mut h = DMatrix::zeros(n, n);
                for j in 0..n {
                    let q = (r[j] * r[j] + w * w).sqrt();
                    s += q;
                    g[j] = r[j] / q;
                    h[(j, j)] = w * w / (q * q * q);
                }
                (s, g, h)
            }
            NormIndex::Inf => {
                let top = r.iter().fold(0.0_f64, |m, x| m.max(x.abs())) / w;
                let plus: Vec<f64> = r.iter().map(|x| (x / w - top).exp()).collect();
                let minus: Vec<f64> = r.iter().map(|x| (-x / w - top).exp()).collect();
                let total: f64 = plus.iter().sum::<f64>() + minus.iter().sum::<f64>();
                let s = w * (top + total.ln());
                let pp = DVector::from_iterator(n, plus.iter().map(|v| v / total));
                let pm = DVector::from_iterator(n, minus.iter().map(|v| v / total));
                let g = &pp - &pm;
                let mut h = DMatrix::from_diagonal(&(&pp + &pm)) - &g * g.transpose();
                h /= w;
                (s, g, h)
            }
            NormIndex::Two => unreachable!("p = 2 uses the closed form"),
        }
    }

    fn value(&self, kappa: &DVector<f64>) -> f64 {
        let r = self.beta - self.theta * kappa;
        let (s, _, _) = self.norm_parts(&r);
        s * s + kappa.iter().zip(self.dinv.iter()).map(|(a, b)| b * a * a).sum::<f64>()
    }

    fn eval(&self, kappa: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let r = self.beta - self.theta * kappa;
        let (s, gr, hr) = self.norm_parts(&r);
        let ds = -(self.theta.tr_mul(&gr));
        let d2s = self.theta.transpose() * hr * self.theta;
        let ridge = DMatrix::from_diagonal(self.dinv);
        let f = s * s + kappa.iter().zip(self.dinv.iter()).map(|(a, b)| b * a * a).sum::<f64>();
        let grad = &ds * (2.0 * s) + (&ridge * kappa) * 2.0;
        let hess = &ds * ds.transpose() * 2.0 + d2s * (2.0 * s) + ridge * 2.0;
        (f, grad, hess)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn e1_rep(lambda: f64) -> Representation {
        Representation::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), vec![lambda]).unwrap()
    }

    #[test]
    fn psi_single_direction() {
        let g = psi_matrix(&e1_rep(3.0)).unwrap();
        // Direct dense inverse of I + 3 e1 e1^T.
        let dense = (DMatrix::identity(2, 2) + DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]))
            .try_inverse()
            .unwrap();
        assert_relative_eq!(g.psi, dense, epsilon = 1e-14);
        assert_relative_eq!(g.psi[(0, 0)], 0.25, epsilon = 1e-14);
        assert!(!g.is_seminorm);
    }

    #[test]
    fn psi_identity_cases() {
        let g = psi_matrix(&Representation::none(3)).unwrap();
        assert_eq!(g.psi, DMatrix::identity(3, 3));
        let rep = Representation::uniform(DMatrix::from_element(3, 2, 0.7), 0.0).unwrap();
        assert_eq!(psi_matrix(&rep).unwrap().psi, DMatrix::identity(3, 3));
    }

    #[test]
    fn psi_infinite_limit() {
        let g = psi_matrix(&e1_rep(f64::INFINITY)).unwrap();
        assert_relative_eq!(g.psi, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), epsilon = 1e-15);
        assert!(g.is_seminorm);
        assert_eq!(g.null_rank(), 1);
        assert_relative_eq!(g.infinite_block_basis[(0, 0)].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dependent_infinite_columns_are_dropped() {
        let theta = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let g = psi_matrix(&Representation::uniform(theta, f64::INFINITY).unwrap()).unwrap();
        assert_eq!(g.null_rank(), 1);
        let v = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        assert!((&g.psi * v).norm() < 1e-14);
        assert_relative_eq!(g.psi[(2, 2)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn phi_closed_form_examples() {
        let beta = DVector::from_vec(vec![1.0, 0.0]);
        let v = phi(&beta, &e1_rep(3.0), NormIndex::Two).unwrap();
        assert_relative_eq!(v.value, 0.5, epsilon = 1e-14);
        // kappa = (1 + 1/3)^{-1} = 0.75
        assert_relative_eq!(v.kappa[0], 0.75, epsilon = 1e-14);

        let b = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let rep = Representation::uniform(DMatrix::from_element(3, 2, 0.4), 0.0).unwrap();
        let v = phi(&b, &rep, NormIndex::Two).unwrap();
        assert_relative_eq!(v.value, b.norm(), epsilon = 1e-14);
        assert!(v.kappa.iter().all(|k| *k == 0.0));
    }

    #[test]
    fn phi_vanishes_on_span_with_infinite_weights() {
        let theta = DMatrix::from_column_slice(3, 2, &[1.0, 0.5, 0.0, 0.0, 1.0, 1.0]);
        let beta = &theta * DVector::from_vec(vec![2.0, -1.0]);
        let rep = Representation::uniform(theta, f64::INFINITY).unwrap();
        for p in [NormIndex::One, NormIndex::Two, NormIndex::Inf] {
            let v = phi(&beta, &rep, p).unwrap();
            assert!(v.value < 1e-10, "{p:?}: {}", v.value);
        }
    }

    #[test]
    fn phi_residual_form_matches_quadratic_form() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 1.0, 0.5, 0.5]);
        let rep = Representation::new(theta.clone(), vec![2.0, 0.5]).unwrap();
        let beta = DVector::from_vec(vec![0.7, -0.1, 1.3]);
        let v = phi(&beta, &rep, NormIndex::Two).unwrap();
        let r = &beta - &theta * &v.kappa;
        let direct = r.norm_squared() + v.kappa[0].powi(2) / 2.0 + v.kappa[1].powi(2) / 0.5;
        assert_relative_eq!(v.value.powi(2), direct, epsilon = 1e-13);
    }

    #[test]
    fn cost_examples() {
        let u = DVector::from_vec(vec![0.0, 2.0]);
        assert_eq!(cost_c(&u, &e1_rep(5.0), NormIndex::Two), 4.0);
        assert_eq!(cost_c(&u, &e1_rep(f64::INFINITY), NormIndex::Inf), 4.0);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(cost_c(&e1, &e1_rep(f64::INFINITY), NormIndex::Two), f64::INFINITY);
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        assert_relative_eq!(cost_c(&ones, &e1_rep(3.0), NormIndex::Two), 5.0);
        assert_relative_eq!(cost_c(&ones, &e1_rep(3.0), NormIndex::One), 7.0);
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if f(a) <= f(b) { hi = b } else { lo = a }
        }
        f(0.5 * (lo + hi))
    }

    #[test]
    fn general_p_matches_scalar_search() {
        let theta = DMatrix::from_column_slice(4, 1, &[0.9, -0.4, 0.3, 1.1]);
        let beta = DVector::from_vec(vec![1.0, 0.2, -0.7, 0.5]);
        for lambda in [0.3, 4.0, f64::INFINITY] {
            let rep = Representation::new(theta.clone(), vec![lambda]).unwrap();
            for p in [NormIndex::One, NormIndex::Inf] {
                let oracle = golden_min(
                    |k| {
                        let r = &beta - theta.column(0) * k;
                        let ridge = if lambda.is_infinite() { 0.0 } else { k * k / lambda };
                        p.norm(&r).powi(2) + ridge
                    },
                    -10.0,
                    10.0,
                );
                let v = phi_general(&beta, &rep, p);
                assert_relative_eq!(v.value.powi(2), oracle, max_relative = 1e-7);
            }
        }
    }
}
