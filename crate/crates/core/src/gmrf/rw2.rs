use crate::error::{Error, Result};

use super::correlation::UniformCorrelation;
use super::sparse::SparsePrecision;

/// Second-order random walk prior on a regular grid of `len` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rw2Structure {
    len: usize,
    kappa: f64,
}

impl Rw2Structure {
    pub fn new(len: usize, kappa: f64) -> Result<Self> {
        if len < 3 {
            return Err(Error::InvalidDimension(format!(
                "RW2 needs at least 3 points, got {len}"
            )));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "RW2 precision must be positive, got {kappa}"
            )));
        }
        Ok(Self { len, kappa })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn precision(&self) -> SparsePrecision {
        let n = self.len;
        let mut q = SparsePrecision::zeros(n);
        // Accumulate D^T D one second-difference row at a time.
        const STENCIL: [f64; 3] = [1.0, -2.0, 1.0];
        for start in 0..n - 2 {
            for (a, ca) in STENCIL.iter().enumerate() {
                for (b, cb) in STENCIL.iter().enumerate().skip(a) {
                    q.add(start + a, start + b, self.kappa * ca * cb);
                }
            }
        }
        q.with_structure(2, Some(rw2_log_generalized_determinant(n, self.kappa)))
    }

    /// `kappa * sum_j (x_j - 2 x_{j-1} + x_{j-2})^2`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.kappa * unit_rw2_quad_form(x)
    }
}

fn unit_rw2_quad_form(x: &[f64]) -> f64 {
    x.windows(3)
        .map(|w| {
            let d = w[2] - 2.0 * w[1] + w[0];
            d * d
        })
        .sum()
}

/// The nonzero eigenvalues of the unit RW2 structure multiply to
/// `n^2 (n^2 - 1) / 12`; scaling by kappa contributes `kappa^(n-2)`.
pub fn rw2_log_generalized_determinant(len: usize, kappa: f64) -> f64 {
    let n = len as f64;
    (n - 2.0) * kappa.ln() + (n * n).ln() + (n * n - 1.0).ln() - 12f64.ln()
}

pub fn build_rw2_precision(len: usize, kappa: f64) -> Result<SparsePrecision> {
    Ok(Rw2Structure::new(len, kappa)?.precision())
}

/// `C^{-1} (x) P` with strata as the outer (slow) index: entry
/// `(r * n + t, s * n + u) = (C^{-1})_{rs} P_{tu}`.
pub fn build_kronecker_precision(
    corr: &UniformCorrelation,
    structure: &SparsePrecision,
) -> Result<SparsePrecision> {
    let r = corr.dim();
    let n = structure.dim();
    let dim = r
        .checked_mul(n)
        .ok_or_else(|| Error::Capacity(format!("{r} x {n} Kronecker dimension overflows")))?;
    let rank_def = r
        .checked_mul(structure.rank_deficiency())
        .ok_or_else(|| Error::Capacity("rank deficiency overflows".into()))?;
    let cinv = corr.inverse();
    let mut q = SparsePrecision::zeros(dim);
    for (t, u, p) in structure.iter_upper() {
        for a in 0..r {
            for b in 0..r {
                let v = cinv[(a, b)] * p;
                if v == 0.0 {
                    continue;
                }
                let (row, col) = (a * n + t, b * n + u);
                // Each unordered block pair is visited once from the
                // upper triangle of P; the mirrored pair comes from (b, a).
                if t == u {
                    if a <= b {
                        q.set(row, col, v);
                    }
                } else {
                    q.set(row, col, v);
                }
            }
        }
    }
    let log_gdet = structure.log_generalized_determinant().map(|lp| {
        (n - structure.rank_deficiency()) as f64 * (-corr.log_det()) + r as f64 * lp
    });
    Ok(q.with_structure(rank_def, log_gdet))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn four_point_matrix() {
        let q = build_rw2_precision(4, 1.0).unwrap().to_dense();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -2.0, 1.0, 0.0, -2.0, 5.0, -4.0, 1.0, 1.0, -4.0, 5.0, -2.0, 0.0, 1.0, -2.0,
                1.0,
            ],
        );
        assert_eq!(q, expected);
    }

    #[test]
    fn interior_rows_follow_stencil() {
        let q = build_rw2_precision(7, 1.0).unwrap().to_dense();
        let row: Vec<f64> = (0..7).map(|j| q[(3, j)]).collect();
        assert_eq!(row, vec![0.0, 1.0, -4.0, 6.0, -4.0, 1.0, 0.0]);
        assert_eq!(q[(1, 1)], 5.0);
    }

    #[test]
    fn linear_vectors_are_free() {
        let q = build_rw2_precision(4, 3.0).unwrap();
        for (a, d) in [(0.0, 1.0), (2.5, -0.7), (-10.0, 4.0)] {
            let x: Vec<f64> = (0..4).map(|j| a + d * j as f64).collect();
            assert!(q.quad_form(&x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_quadratic_form() {
        let q = build_rw2_precision(5, 2.0).unwrap();
        let x = [0.0, 0.0, 1.0, 0.0, 0.0];
        assert!((q.quad_form(&x).unwrap() - 12.0).abs() < 1e-14);
        assert!((Rw2Structure::new(5, 2.0).unwrap().quad_form(&x) - 12.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(build_rw2_precision(2, 1.0), Err(Error::InvalidDimension(_))));
        assert!(matches!(build_rw2_precision(5, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_rw2_precision(5, -1.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn kronecker_with_identity_is_block_diagonal() {
        let p = build_rw2_precision(5, 1.5).unwrap();
        let q = build_kronecker_precision(&UniformCorrelation::identity(2), &p).unwrap();
        assert_eq!(q.rank_deficiency(), 4);
        let d = q.to_dense();
        let pd = p.to_dense();
        for i in 0..10 {
            for j in 0..10 {
                let expected = if i / 5 == j / 5 { pd[(i % 5, j % 5)] } else { 0.0 };
                assert_eq!(d[(i, j)], expected);
            }
        }
    }
}
