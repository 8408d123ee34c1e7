//! Target samples and prior-knowledge representations.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, ReadError, Result};

/// Target sample: an `N x d` design matrix and its `N` responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(invalid("dataset needs at least one row and one column"));
        }
        if x.nrows() != y.len() {
            return Err(ReadError::DimensionMismatch {
                what: "response length vs design rows",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(invalid("dataset contains non-finite entries"));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Number of samples `N`.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Covariate dimension `d`.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    /// Mean squared error `||y - X beta||^2 / N`.
    pub fn mse(&self, beta: &DVector<f64>) -> f64 {
        self.residuals(beta).norm_squared() / self.n() as f64
    }

    /// Sample second moment `X^T X / N`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.x.tr_mul(&self.x) / self.n() as f64
    }

    pub(crate) fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.d() {
            return Err(ReadError::DimensionMismatch {
                what: "coefficient length vs covariate dimension",
                expected: self.d(),
                found: beta.len(),
            });
        }
        Ok(())
    }
}

/// Prior coefficients `theta_1..theta_M` (columns of a `d x M` matrix) and
/// their alignment weights in `[0, +inf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    theta: DMatrix<f64>,
    lambda: Vec<f64>,
}

impl Representation {
    pub fn new(theta: DMatrix<f64>, lambda: Vec<f64>) -> Result<Self> {
        if theta.nrows() == 0 {
            return Err(invalid("representation needs d >= 1 rows"));
        }
        if theta.ncols() != lambda.len() {
            return Err(ReadError::DimensionMismatch {
                what: "alignment vector length vs number of prior columns",
                expected: theta.ncols(),
                found: lambda.len(),
            });
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(invalid("prior matrix contains non-finite entries"));
        }
        if let Some(bad) = lambda.iter().find(|l| l.is_nan() || **l < 0.0) {
            return Err(invalid(format!("alignment weights must lie in [0, inf], got {bad}")));
        }
        Ok(Self { theta, lambda })
    }

    /// No prior knowledge (`M = 0`).
    pub fn none(d: usize) -> Self {
        Self { theta: DMatrix::zeros(d, 0), lambda: Vec::new() }
    }

    /// Same prior matrix with every weight set to `value`.
    pub fn uniform(theta: DMatrix<f64>, value: f64) -> Result<Self> {
        let m = theta.ncols();
        Self::new(theta, vec![value; m])
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(self.theta.clone(), lambda)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn d(&self) -> usize {
        self.theta.nrows()
    }

    pub fn m(&self) -> usize {
        self.theta.ncols()
    }

    pub(crate) fn columns_where(&self, pred: impl Fn(f64) -> bool) -> (Vec<usize>, DMatrix<f64>) {
        let idx: Vec<usize> = (0..self.m()).filter(|&i| pred(self.lambda[i])).collect();
        let cols = DMatrix::from_fn(self.d(), idx.len(), |r, c| self.theta[(r, idx[c])]);
        (idx, cols)
    }
}
