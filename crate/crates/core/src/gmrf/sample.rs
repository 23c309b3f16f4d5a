use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::sparse::{to_dvector, SparsePrecision};

/// Relative diagonal jitter used only inside the factorization of
/// intrinsic precisions.
pub const FACTOR_JITTER: f64 = 1e-8;

/// Hard linear constraints `A x = e`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearConstraintSet {
    dim: usize,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

impl LinearConstraintSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn push(&mut self, row: Vec<f64>, rhs: f64) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        self.rows.push(row);
        self.rhs.push(rhs);
        if !self.rows_independent() {
            self.rows.pop();
            self.rhs.pop();
            return Err(Error::InvalidParameter(
                "constraint rows are linearly dependent".into(),
            ));
        }
        Ok(())
    }

    /// `sum x[start..start+len] = 0`.
    pub fn push_sum_to_zero(&mut self, start: usize, len: usize) -> Result<()> {
        let mut row = vec![0.0; self.dim];
        row[start..start + len].iter_mut().for_each(|v| *v = 1.0);
        self.push(row, 0.0)
    }

    /// `sum_t (t - centre) x[start + t] = 0` over the block.
    pub fn push_zero_linear_trend(&mut self, start: usize, len: usize) -> Result<()> {
        let centre = (len as f64 - 1.0) / 2.0;
        let mut row = vec![0.0; self.dim];
        for t in 0..len {
            row[start + t] = t as f64 - centre;
        }
        self.push(row, 0.0)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.dim, |i, j| self.rows[i][j])
    }

    /// Largest absolute residual `|A x - e|`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, e)| (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - e).abs())
            .fold(0.0, f64::max)
    }

    fn rows_independent(&self) -> bool {
        let a = self.matrix();
        let gram = &a * a.transpose();
        let scale = gram.diagonal().max().max(1.0);
        gram.symmetric_eigenvalues()
            .iter()
            .all(|&ev| ev > 1e-10 * scale)
    }
}

fn factorize(q: &SparsePrecision) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let dense = q.to_dense();
    if q.rank_deficiency() == 0 {
        if let Some(c) = dense.clone().cholesky() {
            return Ok(c);
        }
    }
    let jitter = FACTOR_JITTER * q.max_abs_diagonal().max(f64::MIN_POSITIVE);
    let mut reg = dense;
    for i in 0..reg.nrows() {
        reg[(i, i)] += jitter;
    }
    reg.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "Cholesky failed on {}-dimensional precision after diagonal jitter {jitter:e} \
             (declared rank deficiency {})",
            q.dim(),
            q.rank_deficiency()
        ))
    })
}

/// Draws from the Gaussian with density proportional to
/// `exp(-x^T Q x / 2 + b^T x)` conditioned on `A x = e`.
///
/// An unconstrained draw is corrected by kriging onto the constraint
/// surface. Intrinsic precisions need constraints spanning their null
/// space.
pub fn sample_constrained_gmrf<R: Rng + ?Sized>(
    b: &[f64],
    q: &SparsePrecision,
    constraints: &LinearConstraintSet,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = q.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    if !constraints.is_empty() && constraints.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: constraints.dim(),
        });
    }
    let chol = factorize(q)?;
    let mean = chol.solve(&to_dvector(b));
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    // L^T v = z gives v ~ N(0, Q^{-1}).
    let lt = chol.l().transpose();
    let v = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mut x = mean + v;
    if !constraints.is_empty() {
        let a = constraints.matrix();
        let e = DVector::from_column_slice(constraints.rhs());
        let qinv_at = chol.solve(&a.transpose());
        let w = &a * &qinv_at;
        let wchol = w.cholesky().ok_or_else(|| {
            Error::Numerical("constraint covariance A Q^-1 A^T not positive definite".into())
        })?;
        let resid = &a * &x - &e;
        x -= &qinv_at * wchol.solve(&resid);
        // Round-off cleanup: a Euclidean projection of the tiny remaining
        // residual so the constraint holds to machine precision.
        let resid = &a * &x - &e;
        let aat = (&a * a.transpose())
            .cholesky()
            .ok_or_else(|| Error::Numerical("constraint rows degenerate".into()))?;
        x -= a.transpose() * aat.solve(&resid);
    }
    Ok(x.iter().copied().collect())
}

/// Log density up to the `-(n - rank_def)/2 log(2 pi)` constant:
/// `0.5 * log|Q|* - 0.5 * x^T Q x`.
pub fn gmrf_log_density(x: &[f64], q: &SparsePrecision) -> Result<f64> {
    let log_gdet = q.log_generalized_determinant().ok_or_else(|| {
        Error::InvalidParameter("precision has no known generalized determinant".into())
    })?;
    Ok(0.5 * log_gdet - 0.5 * q.quad_form(x)?)
}
