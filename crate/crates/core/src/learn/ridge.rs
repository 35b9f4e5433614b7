use nalgebra::{Cholesky, DMatrix};

use super::LearnError;

/// Pivot ratio below which the normal matrix counts as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// Streaming sums `X^T X` and `X^T Y` for a ridge fit, so the data rows never
/// have to be held at once.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeAccumulator {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    rows: usize,
}

impl RidgeAccumulator {
    pub fn new(n_inputs: usize, n_outputs: usize) -> Self {
        Self { gram: DMatrix::zeros(n_inputs, n_inputs), cross: DMatrix::zeros(n_inputs, n_outputs), rows: 0 }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// Adds a block of rows: `x` is `rows x n`, `y` is `rows x q`.
    pub fn add_rows(&mut self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(), LearnError> {
        if x.nrows() != y.nrows() {
            return Err(LearnError::DimensionMismatch { expected: x.nrows(), got: y.nrows() });
        }
        if x.ncols() != self.gram.nrows() {
            return Err(LearnError::DimensionMismatch { expected: self.gram.nrows(), got: x.ncols() });
        }
        if y.ncols() != self.cross.ncols() {
            return Err(LearnError::DimensionMismatch { expected: self.cross.ncols(), got: y.ncols() });
        }
        self.gram.gemm_tr(1.0, x, x, 1.0);
        self.cross.gemm_tr(1.0, x, y, 1.0);
        self.rows += x.nrows();
        Ok(())
    }

    /// `1e-3 trace(X^T X) / rows`.
    pub fn default_lambda(&self) -> f64 {
        if self.rows == 0 {
            return 0.0;
        }
        1e-3 * self.gram.trace() / self.rows as f64
    }

    /// The `q x n` map `M` with `y ~ M x`, i.e. the transpose of
    /// `(X^T X + lambda I)^-1 X^T Y`.
    pub fn solve(&self, lambda: f64) -> Result<DMatrix<f64>, LearnError> {
        self.solve_penalizing(lambda, self.gram.nrows())
    }

    /// As [`RidgeAccumulator::solve`] with the last input taken as a constant
    /// intercept column, which is left out of the penalty.
    pub fn solve_with_intercept(&self, lambda: f64) -> Result<DMatrix<f64>, LearnError> {
        self.solve_penalizing(lambda, self.gram.nrows().saturating_sub(1))
    }

    /// Adds `lambda` to the first `penalized` diagonal entries only.
    fn solve_penalizing(&self, lambda: f64, penalized: usize) -> Result<DMatrix<f64>, LearnError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LearnError::InvalidConfig {
                field: "ridge_lambda",
                reason: format!("must be >= 0, got {lambda}"),
            });
        }
        let n = self.gram.nrows();
        let mut normal = self.gram.clone();
        for i in 0..penalized {
            normal[(i, i)] += lambda;
        }
        let chol = Cholesky::new(normal).ok_or(LearnError::SingularSystem { lambda })?;
        let pivots = chol.l_dirty().diagonal();
        let (lo, hi) = pivots.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        if n > 0 && lo * lo < SINGULAR_PIVOT_RATIO * hi * hi {
            return Err(LearnError::SingularSystem { lambda });
        }
        Ok(chol.solve(&self.cross).transpose())
    }
}

/// Ridge regression of the rows of `y` (`rows x q`) on the rows of `x`
/// (`rows x n`). Returns the `q x n` map `M` with `y_i ~ M x_i`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>, LearnError> {
    let mut acc = RidgeAccumulator::new(x.ncols(), y.ncols());
    acc.add_rows(x, y)?;
    acc.solve(lambda)
}
