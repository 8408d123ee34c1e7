//! Representation-aware distributionally robust linear regression.
//!
//! The estimator minimizes the square-root loss plus `sqrt(delta)` times a
//! seminorm built from prior coefficient vectors, so that fits are robust to
//! covariate perturbations except along directions the priors already explain.
//!
//! - [`geometry`]: the transport cost and its dual seminorm.
//! - [`solver`]: least squares, the robust fit and a reference solver.
//! - [`rwpi`]: radius selection, confidence regions and polyhedral envelopes.
//! - [`tuning`]: data-driven choice of the alignment weights.
//! - [`sim`]: the simulation harness used to compare methods.
//! - [`cli`]: the `read-dro` command-line front end.
//!
//! ```
//! use nalgebra::{DMatrix, DVector};
//! use read_dro::data::{Dataset, Representation};
//! use read_dro::solver::{fit_read, SolverConfig};
//!
//! let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
//! let y = DVector::from_vec(vec![1.0, 2.0, 2.9]);
//! let data = Dataset::new(x, y)?;
//! let rep = Representation::none(2);
//! let fit = fit_read(&data, &rep, 0.1, &SolverConfig::default())?;
//! assert!(fit.beta.norm() > 0.0);
//! # Ok::<(), read_dro::error::ReadError>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
mod linalg;
pub mod rng;
pub mod rwpi;
pub mod sim;
pub mod solver;
pub mod tuning;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/radius.md")]
    mod radius {}
    #[doc = include_str!("../../../book/src/regions.md")]
    mod regions {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/simulations.md")]
    mod simulations {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
