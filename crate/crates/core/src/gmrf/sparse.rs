use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric sparse precision matrix stored as its upper triangle.
///
/// Besides the coefficients it carries the number of structurally zero
/// eigenvalues and, when known, the log of the generalized determinant
/// (the product of the nonzero eigenvalues).
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    dim: usize,
    entries: BTreeMap<(usize, usize), f64>,
    rank_deficiency: usize,
    log_gdet: Option<f64>,
}

impl SparsePrecision {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
            rank_deficiency: 0,
            log_gdet: None,
        }
    }

    /// Builds from a dense symmetric matrix, dropping exact zeros.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidDimension(format!(
                "precision must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut out = Self::zeros(m.nrows());
        for i in 0..m.nrows() {
            for j in i..m.ncols() {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "precision not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
                if a != 0.0 {
                    out.entries.insert((i, j), a);
                }
            }
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz_upper(&self) -> usize {
        self.entries.len()
    }

    pub fn rank_deficiency(&self) -> usize {
        self.rank_deficiency
    }

    pub fn log_generalized_determinant(&self) -> Option<f64> {
        self.log_gdet
    }

    pub fn set_structure(&mut self, rank_deficiency: usize, log_gdet: Option<f64>) {
        self.rank_deficiency = rank_deficiency;
        self.log_gdet = log_gdet;
    }

    pub fn with_structure(mut self, rank_deficiency: usize, log_gdet: Option<f64>) -> Self {
        self.set_structure(rank_deficiency, log_gdet);
        self
    }

    /// Computes the log determinant of a proper (full rank) precision by
    /// Cholesky factorization and stores it.
    pub fn with_log_determinant(mut self) -> Result<Self> {
        let chol = self.to_dense().cholesky().ok_or_else(|| {
            Error::Numerical("precision is not positive definite".to_string())
        })?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        self.rank_deficiency = 0;
        self.log_gdet = Some(logdet);
        Ok(self)
    }

    #[inline]
    fn key(i: usize, j: usize) -> (usize, usize) {
        if i <= j {
            (i, j)
        } else {
            (j, i)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&Self::key(i, j)).copied().unwrap_or(0.0)
    }

    /// Adds `v` to the symmetric pair (i, j) and (j, i).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.dim && j < self.dim, "index out of bounds");
        *self.entries.entry(Self::key(i, j)).or_insert(0.0) += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.dim && j < self.dim, "index out of bounds");
        self.entries.insert(Self::key(i, j), v);
    }

    /// Upper-triangle entries `(row, col, value)` with `row <= col`.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in out.entries.values_mut() {
            *v *= factor;
        }
        if let Some(l) = out.log_gdet.as_mut() {
            *l += (self.dim - self.rank_deficiency) as f64 * factor.ln();
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut y = vec![0.0; self.dim];
        for (&(i, j), &v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        let mut acc = 0.0;
        for (&(i, j), &v) in &self.entries {
            if i == j {
                acc += v * x[i] * x[i];
            } else {
                acc += 2.0 * v * x[i] * x[j];
            }
        }
        Ok(acc)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (&(i, j), &v) in &self.entries {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }
}

pub(crate) fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_add_and_matvec() {
        let mut q = SparsePrecision::zeros(3);
        q.add(0, 0, 2.0);
        q.add(1, 0, -1.0);
        q.add(2, 2, 3.0);
        assert_eq!(q.get(0, 1), -1.0);
        assert_eq!(q.mul_vec(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, -1.0, 3.0]);
        assert_eq!(q.quad_form(&[1.0, 1.0, 1.0]).unwrap(), 3.0);
        assert_eq!(q.to_dense(), q.to_dense().transpose());
    }

    #[test]
    fn rejects_asymmetric_dense() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SparsePrecision::from_dense(&m).is_err());
    }

    #[test]
    fn dimension_mismatch_reported() {
        let q = SparsePrecision::zeros(2);
        assert!(matches!(
            q.quad_form(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn log_determinant_of_diagonal() {
        let mut q = SparsePrecision::zeros(2);
        q.add(0, 0, 2.0);
        q.add(1, 1, 3.0);
        let q = q.with_log_determinant().unwrap();
        assert!((q.log_generalized_determinant().unwrap() - 6f64.ln()).abs() < 1e-14);
    }
}
