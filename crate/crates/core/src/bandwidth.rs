//! SPD bandwidth matrices and their spectral diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

const SYMMETRY_TOL: f64 = 1e-12;
const EIGENVALUE_FLOOR: f64 = 1e-14;

/// A symmetric positive-definite bandwidth `h` with its spectrum cached.
///
/// Immutable once built, so it can be shared freely between worker threads.
#[derive(Debug, Clone)]
pub struct BandwidthMatrix {
    entries: Matrix,
    inverse: Matrix,
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
    det: f64,
}

impl BandwidthMatrix {
    /// Validates and decomposes `entries`.
    ///
    /// The input is symmetrized before decomposition, after checking that the
    /// largest asymmetric entry is within `1e-12` of the largest entry.
    pub fn new(entries: Matrix) -> Result<Self> {
        let asym = entries.max_relative_asymmetry();
        if !(asym <= SYMMETRY_TOL) {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        let entries = entries.symmetrized();
        if entries.frobenius_norm().is_nan() {
            return Err(Error::InvalidParameter("bandwidth contains NaN".into()));
        }
        let eig = symmetric_eigen(&entries);
        let min = *eig.values.last().expect("dimension >= 1");
        if !(min > EIGENVALUE_FLOOR) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        let n = entries.dim();
        let mut inverse = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                inverse[(i, j)] = (0..n)
                    .map(|k| eig.vectors[(i, k)] * eig.vectors[(j, k)] / eig.values[k])
                    .sum();
            }
        }
        let det = eig.values.iter().product();
        Ok(Self {
            entries,
            inverse,
            eigenvalues: eig.values,
            eigenvectors: eig.vectors,
            det,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows).ok_or_else(|| {
            Error::InvalidParameter("bandwidth must be a non-empty square matrix".into())
        })?;
        Self::new(m)
    }

    pub fn identity(d: usize) -> Self {
        Self::scalar(d, 1.0).expect("identity is SPD")
    }

    /// `eps · I`
    pub fn scalar(d: usize, eps: f64) -> Result<Self> {
        Self::diagonal(&vec![eps; d])
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidParameter("empty bandwidth".into()));
        }
        Self::new(Matrix::diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inverse
    }

    /// |h|
    pub fn det(&self) -> f64 {
        self.det
    }

    /// Sorted descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Unit eigenvector for `eigenvalues()[i]`.
    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|r| self.eigenvectors[(r, i)]).collect()
    }

    /// Spectral norm ‖h‖ = λ₁.
    pub fn op_norm(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// ‖h‖^d / |h|, at least 1; bounded only when all eigenvalues are of
    /// comparable magnitude.
    pub fn balance_ratio(&self) -> f64 {
        self.eigenvalues.iter().map(|l| self.op_norm() / l).product()
    }

    /// |h| / ‖h‖^d, at most 1 by Hadamard's inequality.
    pub fn hadamard_ratio(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l / self.op_norm()).product()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(self.entries.mul_vec(v))
    }

    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(self.inverse.mul_vec(v))
    }

    /// h·hᵀ (= h² for symmetric h).
    pub fn gram(&self) -> Matrix {
        self.entries.mul(&self.entries.transpose())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        Ok(())
    }
}

/// Row-major JSON form used in config files and on the command line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(transparent)]
pub struct BandwidthSpec(pub Vec<Vec<f64>>);

impl BandwidthSpec {
    pub fn build(&self) -> Result<BandwidthMatrix> {
        BandwidthMatrix::from_rows(&self.0)
    }
}

impl From<&BandwidthMatrix> for BandwidthSpec {
    fn from(h: &BandwidthMatrix) -> Self {
        BandwidthSpec(h.entries().to_rows())
    }
}
