//! Small dense symmetric-matrix helpers used by the filter.
//!
//! Storage is an `nalgebra::DMatrix`; the supported envelope is dimension
//! 1 through 16. Every constructor goes through [`symmetrize`], so
//! `entries[i][j] == entries[j][i]` holds bit-exactly for any [`SymMatrix`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 16;

/// Initial diagonal jitter as a fraction of the trace.
const JITTER_START: f64 = 1e-12;
/// Jitter ceiling as a fraction of the trace; beyond this the factorization fails.
const JITTER_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds from row-major entries, symmetrizing on the way in.
    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Self {
        symmetrize(&DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0[(i, j)] == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Row-major copy of the entries.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

/// Returns `(A + Aᵀ) / 2`.
///
/// Panics if `a` is not square.
pub fn symmetrize(a: &DMatrix<f64>) -> SymMatrix {
    assert!(a.is_square(), "symmetrize needs a square matrix");
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = a[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    SymMatrix(out)
}

/// Lower-triangular Cholesky factor `S` with `P = S·Sᵀ`.
///
/// If the plain factorization fails, a diagonal jitter `ε·I` is added,
/// starting at `1e-12·trace(P)` and doubling until `1e-6·trace(P)`.
pub fn cholesky(p: &SymMatrix) -> Result<DMatrix<f64>> {
    let dim = p.dim();
    if let Some(c) = p.0.clone().cholesky() {
        return Ok(c.unpack());
    }
    let trace = p.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::NotPositiveDefinite { dim });
    }
    let mut eps = JITTER_START * trace;
    while eps <= JITTER_LIMIT * trace {
        let mut repaired = p.0.clone();
        for i in 0..dim {
            repaired[(i, i)] += eps;
        }
        if let Some(c) = repaired.cholesky() {
            return Ok(c.unpack());
        }
        eps *= 2.0;
    }
    Err(Error::NotPositiveDefinite { dim })
}

/// Solves `A·X = B` for SPD `A` through its Cholesky factor.
pub fn spd_solve(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky(a)?;
    let y = l
        .solve_lower_triangular(b)
        .ok_or(Error::NotPositiveDefinite { dim: a.dim() })?;
    l.transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::NotPositiveDefinite { dim: a.dim() })
}
