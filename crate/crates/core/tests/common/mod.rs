//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use read_dro::data::{Dataset, Representation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| sd * normal(rng))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * normal(rng))
}

/// Gaussian design with a random coefficient vector and unit noise.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let x = normal_matrix(rng, n, d, 1.0);
    let beta = normal_vector(rng, d, 1.0);
    let y = &x * beta + normal_vector(rng, n, 1.0);
    Dataset::new(x, y).unwrap()
}

/// Random alignment weights drawn from {0, finite, inf} according to `kind`:
/// 0 = all zero, 1 = all finite, 2 = mixed, 3 = all infinite.
pub fn random_lambda(rng: &mut ChaCha8Rng, m: usize, kind: u32) -> Vec<f64> {
    (0..m)
        .map(|_| match kind {
            0 => 0.0,
            1 => rng.random_range(0.1..10.0),
            2 => match rng.random_range(0..3) {
                0 => 0.0,
                1 => rng.random_range(0.1..10.0),
                _ => f64::INFINITY,
            },
            _ => f64::INFINITY,
        })
        .collect()
}

/// `Xi_i = e_i I - beta x_i^T`, computed entry by entry.
pub fn xi_matrix(data: &Dataset, beta: &DVector<f64>, i: usize) -> DMatrix<f64> {
    let d = beta.len();
    let e = data.y()[i] - (0..d).map(|j| data.x()[(i, j)] * beta[j]).sum::<f64>();
    DMatrix::from_fn(d, d, |r, c| if r == c { e } else { 0.0 } - beta[r] * data.x()[(i, c)])
}

/// Solves `min (1/N) sum_i u_i^T (I + Theta Lambda Theta^T) u_i` subject to
/// `(1/N) sum_i Xi_i^T u_i = h` by assembling and solving the full KKT system.
/// Columns with infinite weight become the hard constraints
/// `theta_m^T u_i = 0`. Returns `None` when the system is singular
/// (infeasible constraint).
pub fn kkt_conjugate(data: &Dataset, beta: &DVector<f64>, rep: &Representation, h: &DVector<f64>) -> Option<f64> {
    let (n, d) = (data.n(), data.d());
    let nf = n as f64;
    let mut a = DMatrix::identity(d, d);
    let mut hard: Vec<DVector<f64>> = Vec::new();
    for (m, &l) in rep.lambda().iter().enumerate() {
        let t = rep.theta().column(m).into_owned();
        if l.is_infinite() {
            hard.push(t);
        } else {
            a += &t * t.transpose() * l;
        }
    }
    let r = hard.len();
    let block = d + r;
    let size = n * block + d;
    let mut k = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    let nu0 = n * block;
    for i in 0..n {
        let xi = xi_matrix(data, beta, i);
        let off = i * block;
        // Stationarity in u_i: (2/N) A u_i + (1/N) Xi_i nu + sum_k omega_ik t_k = 0.
        for p in 0..d {
            for q in 0..d {
                k[(off + p, off + q)] = 2.0 * a[(p, q)] / nf;
                k[(off + p, nu0 + q)] = xi[(p, q)] / nf;
                k[(nu0 + q, off + p)] = xi[(p, q)] / nf;
            }
            for (c, t) in hard.iter().enumerate() {
                k[(off + p, off + d + c)] = t[p];
                k[(off + d + c, off + p)] = t[p];
            }
        }
    }
    for q in 0..d {
        rhs[nu0 + q] = h[q];
    }
    let lu = k.clone().lu();
    let sol = lu.solve(&rhs)?;
    if (&k * &sol - &rhs).norm() > 1e-8 * (1.0 + rhs.norm()) {
        return None;
    }
    let mut value = 0.0;
    for i in 0..n {
        let u = sol.rows(i * block, d).into_owned();
        value += u.dot(&(&a * &u));
    }
    Some(value / nf)
}

/// `P(sum_j w_j Z_j^2 <= x)` for independent standard normals, by numerical
/// inversion of the characteristic function (Imhof's formula) with
/// composite Simpson integration.
pub fn gen_chisq_cdf(weights: &[f64], x: f64) -> f64 {
    let theta = |u: f64| 0.5 * weights.iter().map(|w| (w * u).atan()).sum::<f64>() - 0.5 * x * u;
    let rho = |u: f64| weights.iter().map(|w| (1.0 + w * w * u * u).powf(0.25)).product::<f64>();
    let f = |u: f64| {
        if u == 0.0 {
            0.5 * weights.iter().sum::<f64>() - 0.5 * x
        } else {
            theta(u).sin() / (u * rho(u))
        }
    };
    let wmin = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = 4000.0 / wmin.min(1.0);
    let steps = 2 * ((upper / 0.01) as usize / 2);
    let h = upper / steps as f64;
    let mut acc = f(0.0) + f(upper);
    for k in 1..steps {
        acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = acc * h / 3.0;
    0.5 - integral / std::f64::consts::PI
}

/// `(1 - alpha)` quantile of the weighted chi-square sum and its density there.
pub fn gen_chisq_quantile(weights: &[f64], alpha: f64) -> (f64, f64) {
    let target = 1.0 - alpha;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while gen_chisq_cdf(weights, hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gen_chisq_cdf(weights, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let step = 1e-3 * q;
    let density = (gen_chisq_cdf(weights, q + step) - gen_chisq_cdf(weights, q - step)) / (2.0 * step);
    (q, density)
}

/// Finite-weight quadratic form `I + Theta Lambda Theta^T`.
pub fn cost_matrix(theta: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let d = theta.nrows();
    let mut a = DMatrix::identity(d, d);
    for (m, &l) in lambda.iter().enumerate() {
        let t = theta.column(m);
        a += t * t.transpose() * l;
    }
    a
}

/// `sup_u { u^T beta - cost(u) }` by accelerated gradient ascent on the
/// cost `||u||^2 + sum_m lambda_m (theta_m^T u)^2`.
pub fn conjugate_by_ascent(theta: &DMatrix<f64>, lambda: &[f64], beta: &DVector<f64>) -> f64 {
    let grad_cost = |u: &DVector<f64>| {
        let mut g = u * 2.0;
        for (m, &l) in lambda.iter().enumerate() {
            let t = theta.column(m);
            g += t * (2.0 * l * t.dot(u));
        }
        g
    };
    let objective = |u: &DVector<f64>| {
        let mut c = u.norm_squared();
        for (m, &l) in lambda.iter().enumerate() {
            c += l * theta.column(m).dot(u).powi(2);
        }
        u.dot(beta) - c
    };
    // Lipschitz constant of the gradient: 2 (1 + sum lambda ||theta||^2).
    let lip = 2.0 * (1.0 + lambda.iter().enumerate().map(|(m, l)| l * theta.column(m).norm_squared()).sum::<f64>());
    let mut u = DVector::zeros(beta.len());
    let mut prev = u.clone();
    for k in 0..200_000 {
        let mom = (k as f64) / (k as f64 + 3.0);
        let look = &u + (&u - &prev) * mom;
        let g = beta - grad_cost(&look);
        prev = u;
        u = &look + g / lip;
        if (beta - grad_cost(&u)).norm() < 1e-13 * (1.0 + beta.norm()) {
            break;
        }
    }
    objective(&u)
}
