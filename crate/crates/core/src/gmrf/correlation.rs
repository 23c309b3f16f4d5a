use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Exchangeable correlation matrix `(1 - rho) I + rho J` over `dim` strata.
///
/// Alongside `rho` the two eigenvalues `1 - rho` (multiplicity R-1) and
/// `1 + (R-1) rho` are carried explicitly, so correlations produced from
/// the Fisher z scale keep full relative precision near both ends of the
/// admissible interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformCorrelation {
    dim: usize,
    rho: f64,
    complement: f64,
    spread: f64,
}

/// Lower end of the admissible correlation interval for `dim` strata.
pub fn admissible_lower_bound(dim: usize) -> f64 {
    if dim <= 1 {
        f64::NEG_INFINITY
    } else {
        -1.0 / (dim as f64 - 1.0)
    }
}

fn check(dim: usize, rho: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidDimension("correlation dimension must be positive".into()));
    }
    if !rho.is_finite() || rho >= 1.0 || rho <= admissible_lower_bound(dim) {
        return Err(Error::InvalidParameter(format!(
            "rho = {rho} outside ({}, 1) for R = {dim}",
            admissible_lower_bound(dim)
        )));
    }
    Ok(())
}

impl UniformCorrelation {
    pub fn new(dim: usize, rho: f64) -> Result<Self> {
        check(dim, rho)?;
        Ok(Self {
            dim,
            rho,
            complement: 1.0 - rho,
            spread: 1.0 + (dim as f64 - 1.0) * rho,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            rho: 0.0,
            complement: 1.0,
            spread: 1.0,
        }
    }

    /// Maps `rho_star` in R onto the admissible interval via
    /// `rho = (exp(rho*) - 1) / (exp(rho*) + R - 1)`.
    pub fn from_fisher_z(dim: usize, rho_star: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("correlation dimension must be positive".into()));
        }
        if rho_star.is_nan() {
            return Err(Error::InvalidParameter("rho* is NaN".into()));
        }
        let r = dim as f64;
        let (rho, complement, spread) = if rho_star > 0.0 {
            let e = (-rho_star).exp();
            let denom = 1.0 + (r - 1.0) * e;
            (-(-rho_star).exp_m1() / denom, r * e / denom, r / denom)
        } else {
            let e = rho_star.exp();
            let denom = e + r - 1.0;
            (rho_star.exp_m1() / denom, r / denom, r * e / denom)
        };
        // Saturate the rounded value strictly inside the interval; the
        // eigenvalues above stay exact and positive.
        let lower = admissible_lower_bound(dim);
        let rho = if rho >= 1.0 {
            1.0f64.next_down()
        } else if rho <= lower {
            lower.next_up()
        } else {
            rho
        };
        Ok(Self {
            dim,
            rho,
            complement,
            spread,
        })
    }

    /// Inverse of [`UniformCorrelation::from_fisher_z`]:
    /// `rho* = log((1 + rho (R-1)) / (1 - rho))`.
    pub fn fisher_z(&self) -> f64 {
        self.spread.ln() - self.complement.ln()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { 1.0 } else { self.rho })
    }

    /// Diagonal and off-diagonal entries `(a, b)` of the inverse:
    /// `a = -((R-2) rho + 1) / ((rho - 1)((R-1) rho + 1))`,
    /// `b = rho / ((rho - 1)((R-1) rho + 1))`.
    pub fn inverse_entries(&self) -> (f64, f64) {
        let denom = self.complement * self.spread;
        let a = (self.spread - self.rho) / denom;
        let b = -self.rho / denom;
        (a, b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let (a, b) = self.inverse_entries();
        DMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { a } else { b })
    }

    /// `log |C| = log[(1 + (R-1) rho) (1 - rho)^(R-1)]`.
    pub fn log_det(&self) -> f64 {
        let r = self.dim as f64;
        self.spread.ln() + (r - 1.0) * self.complement.ln()
    }

    /// `x^T C^{-1} y` for R-vectors without forming the matrix.
    pub fn inverse_bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let (a, b) = self.inverse_entries();
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let dot: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
        (a - b) * dot + b * sx * sy
    }
}

/// Closed-form inverse of the uniform correlation matrix.
pub fn uniform_correlation_inverse(dim: usize, rho: f64) -> Result<DMatrix<f64>> {
    Ok(UniformCorrelation::new(dim, rho)?.inverse())
}

/// Closed-form log determinant of the uniform correlation matrix.
pub fn uniform_correlation_logdet(dim: usize, rho: f64) -> Result<f64> {
    Ok(UniformCorrelation::new(dim, rho)?.log_det())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_inverse(dim: usize, rho: f64) -> DMatrix<f64> {
        UniformCorrelation::new(dim, rho).unwrap().matrix().try_inverse().unwrap()
    }

    #[test]
    fn two_by_two_inverse() {
        let inv = uniform_correlation_inverse(2, 0.5).unwrap();
        let oracle = numeric_inverse(2, 0.5);
        assert!((inv[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((inv[(0, 1)] + 2.0 / 3.0).abs() < 1e-14);
        assert!((inv - oracle).abs().max() < 1e-14);
    }

    #[test]
    fn three_by_three_inverse() {
        let inv = uniform_correlation_inverse(3, 0.5).unwrap();
        let oracle = numeric_inverse(3, 0.5);
        assert!((inv[(0, 0)] - 1.5).abs() < 1e-14);
        assert!((inv[(1, 2)] + 0.5).abs() < 1e-14);
        assert!((inv - oracle).abs().max() < 1e-13);
    }

    #[test]
    fn zero_correlation_is_identity() {
        for dim in 1..6 {
            let inv = uniform_correlation_inverse(dim, 0.0).unwrap();
            assert_eq!(inv, DMatrix::identity(dim, dim));
            assert_eq!(uniform_correlation_logdet(dim, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn log_determinants() {
        assert!((uniform_correlation_logdet(3, 0.5).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        assert!((uniform_correlation_logdet(2, 0.9).unwrap() - 0.19f64.ln()).abs() < 1e-14);
        let det = UniformCorrelation::new(2, 0.9).unwrap().matrix().determinant();
        assert!((det - 0.19).abs() < 1e-14);
    }

    #[test]
    fn rejects_inadmissible_rho() {
        assert!(uniform_correlation_inverse(3, -0.5).is_err());
        assert!(uniform_correlation_inverse(3, 1.0).is_err());
        assert!(uniform_correlation_logdet(2, -1.0).is_err());
        assert!(uniform_correlation_logdet(2, f64::NAN).is_err());
        assert!(UniformCorrelation::new(1, -3.0).is_ok());
    }

    #[test]
    fn bilinear_matches_dense() {
        let c = UniformCorrelation::new(4, 0.3).unwrap();
        let x = [0.1, -0.4, 2.0, 1.5];
        let y = [1.0, 0.2, -0.3, 0.7];
        let dense = (nalgebra::DVector::from_column_slice(&x).transpose()
            * c.inverse()
            * nalgebra::DVector::from_column_slice(&y))[(0, 0)];
        assert!((c.inverse_bilinear(&x, &y) - dense).abs() < 1e-13);
    }
}
