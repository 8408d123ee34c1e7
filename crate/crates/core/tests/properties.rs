mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use read_dro::data::{Dataset, Representation};
use read_dro::geometry::{cost_c, phi, psi_matrix, NormIndex};
use read_dro::rwpi::{build_xis, psi_star};
use read_dro::solver::{fit_read, objective_value, SolverConfig};

fn weight() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.01f64..20.0, Just(f64::INFINITY)]
}

prop_compose! {
    fn representation(d: usize, m: usize)(
        theta in prop::collection::vec(-2.0f64..2.0, d * m),
        lambda in prop::collection::vec(weight(), m),
    ) -> Representation {
        Representation::new(DMatrix::from_vec(d, m, theta), lambda).unwrap()
    }
}

prop_compose! {
    fn problem(n: usize, d: usize)(
        x in prop::collection::vec(-2.0f64..2.0, n * d),
        y in prop::collection::vec(-3.0f64..3.0, n),
    ) -> Dataset {
        Dataset::new(DMatrix::from_vec(n, d, x), DVector::from_vec(y)).unwrap()
    }
}

fn vector(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0f64..3.0, d).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_is_a_symmetric_contraction(rep in representation(4, 2)) {
        let psi = psi_matrix(&rep).unwrap().psi;
        prop_assert!((&psi - psi.transpose()).amax() < 1e-12);
        for v in psi.symmetric_eigenvalues().iter() {
            prop_assert!(*v > -1e-9 && *v < 1.0 + 1e-9, "eigenvalue {v}");
        }
    }

    #[test]
    fn phi_bounded_and_homogeneous(rep in representation(4, 2), beta in vector(4), t in -5.0f64..5.0) {
        let p = phi(&beta, &rep, NormIndex::Two).unwrap().value;
        prop_assert!(p <= beta.norm() * (1.0 + 1e-12) + 1e-12);
        let scaled = phi(&(&beta * t), &rep, NormIndex::Two).unwrap().value;
        prop_assert!((scaled - t.abs() * p).abs() <= 1e-9 * (1.0 + p * t.abs()));
    }

    #[test]
    fn phi_decreases_with_alignment(rep in representation(4, 3), beta in vector(4), bump in prop::collection::vec(0.0f64..10.0, 3)) {
        let higher: Vec<f64> = rep.lambda().iter().zip(&bump).map(|(l, b)| l + b).collect();
        let stronger = rep.with_lambda(higher).unwrap();
        let a = phi(&beta, &rep, NormIndex::Two).unwrap().value;
        let b = phi(&beta, &stronger, NormIndex::Two).unwrap().value;
        prop_assert!(b <= a + 1e-9 * (1.0 + a));
    }

    #[test]
    fn fenchel_young_inequality(rep in representation(3, 2), beta in vector(3), u in vector(3)) {
        let c = cost_c(&u, &rep, NormIndex::Two);
        prop_assert!(c >= u.norm_squared() * (1.0 - 1e-12));
        let p2 = phi(&beta, &rep, NormIndex::Two).unwrap().value.powi(2);
        if c.is_finite() {
            prop_assert!(u.dot(&beta) - c <= p2 / 4.0 + 1e-9 * (1.0 + p2));
        }
    }

    #[test]
    fn fit_is_a_local_minimum(data in problem(20, 3), rep in representation(3, 2), log_delta in -4.0f64..1.0, dir in vector(3)) {
        let delta = 10f64.powf(log_delta);
        let Ok(est) = fit_read(&data, &rep, delta, &SolverConfig::default()) else { return Ok(()) };
        let f0 = est.objective;
        for eps in [1e-2, 1e-4] {
            let moved = &est.beta + &dir * eps;
            let f1 = objective_value(&data, &rep, delta, &moved).unwrap();
            prop_assert!(f1 >= f0 - 1e-10 * (1.0 + f0), "{f1} < {f0}");
        }
    }

    #[test]
    fn seminorm_shrinks_with_radius(data in problem(25, 3), rep in representation(3, 1), a in -4.0f64..0.0, gap in 0.01f64..2.0) {
        let cfg = SolverConfig::default();
        let geom = psi_matrix(&rep).unwrap();
        let (Ok(small), Ok(large)) = (fit_read(&data, &rep, 10f64.powf(a), &cfg), fit_read(&data, &rep, 10f64.powf(a + gap), &cfg)) else {
            return Ok(());
        };
        let (s, l) = (geom.seminorm(&small.beta), geom.seminorm(&large.beta));
        prop_assert!(l <= s * (1.0 + 1e-6) + 1e-9, "{l} > {s}");
    }

    #[test]
    fn conjugate_is_quadratically_homogeneous(data in problem(8, 3), rep in representation(3, 1), beta in vector(3), h in vector(3), t in -4.0f64..4.0) {
        let xis = build_xis(&data, &beta).unwrap();
        let geom = psi_matrix(&rep).unwrap();
        let base = psi_star(&h, &xis, &geom);
        let scaled = psi_star(&(&h * t), &xis, &geom);
        if base.is_finite() && t != 0.0 {
            prop_assert!((scaled - t * t * base).abs() <= 1e-9 * (1.0 + t * t * base));
        }
    }
}
