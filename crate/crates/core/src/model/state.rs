use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::{LinearConstraintSet, UniformCorrelation};

use super::spec::{ApcModelSpec, Component, Family, Sharing};
use super::table::Dims;

/// Effect values for one family, stratum-major: `values[r * len + t]`.
/// A shared family holds a single vector (`strata == 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectBlock {
    len: usize,
    strata: usize,
    values: Vec<f64>,
}

impl EffectBlock {
    pub fn zeros(len: usize, strata: usize) -> Self {
        Self {
            len,
            strata,
            values: vec![0.0; len * strata],
        }
    }

    pub fn from_values(len: usize, strata: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != len * strata {
            return Err(Error::DimensionMismatch {
                expected: len * strata,
                actual: values.len(),
            });
        }
        Ok(Self {
            len,
            strata,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn strata(&self) -> usize {
        self.strata
    }

    pub fn is_shared(&self) -> bool {
        self.strata == 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Effect at position `t` as seen by stratum `r`.
    #[inline]
    pub fn get(&self, t: usize, r: usize) -> f64 {
        if self.strata == 1 {
            self.values[t]
        } else {
            self.values[r * self.len + t]
        }
    }

    pub fn stratum(&self, r: usize) -> &[f64] {
        let r = if self.strata == 1 { 0 } else { r };
        &self.values[r * self.len..(r + 1) * self.len]
    }

    /// `x_t - 2 x_{t-1} + x_{t-2}` for stratum `r`.
    pub fn second_differences(&self, r: usize) -> Vec<f64> {
        self.stratum(r)
            .windows(3)
            .map(|w| w[2] - 2.0 * w[1] + w[0])
            .collect()
    }
}

/// Precisions and Fisher-z correlations, indexed by [`Component`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub precision: [f64; 4],
    pub rho_star: [f64; 4],
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            precision: [1.0; 4],
            rho_star: [0.0; 4],
        }
    }
}

impl Hyperparameters {
    pub fn precision(&self, c: Component) -> f64 {
        self.precision[c.index()]
    }

    pub fn rho_star(&self, c: Component) -> f64 {
        self.rho_star[c.index()]
    }
}

/// Full parameter state: intercepts, time effects, cell-level
/// overdispersion and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApcState {
    pub intercepts: Vec<f64>,
    pub age: EffectBlock,
    pub period: EffectBlock,
    pub cohort: EffectBlock,
    /// `z[cell]`, cell-indexed like the table.
    pub overdispersion: Vec<f64>,
    pub hyper: Hyperparameters,
}

impl ApcState {
    pub fn zeros(dims: Dims, spec: &ApcModelSpec) -> Self {
        let block = |f: Family| {
            let strata = if spec.family(f).sharing == Sharing::Shared {
                1
            } else {
                dims.strata
            };
            EffectBlock::zeros(dims.len_of(f), strata)
        };
        let mut hyper = Hyperparameters::default();
        for c in Component::ALL {
            if let super::spec::PrecisionPrior::Fixed(v) = spec.component(c).precision {
                hyper.precision[c.index()] = v;
            }
            if let Some(rho) = spec.component(c).fixed_rho {
                if let Ok(corr) = UniformCorrelation::new(dims.strata, rho) {
                    hyper.rho_star[c.index()] = corr.fisher_z();
                }
            }
        }
        Self {
            intercepts: vec![0.0; dims.strata],
            age: block(Family::Age),
            period: block(Family::Period),
            cohort: block(Family::Cohort),
            overdispersion: vec![0.0; dims.cells()],
            hyper,
        }
    }

    pub fn effects(&self, f: Family) -> &EffectBlock {
        match f {
            Family::Age => &self.age,
            Family::Period => &self.period,
            Family::Cohort => &self.cohort,
        }
    }

    pub fn effects_mut(&mut self, f: Family) -> &mut EffectBlock {
        match f {
            Family::Age => &mut self.age,
            Family::Period => &mut self.period,
            Family::Cohort => &mut self.cohort,
        }
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        let mismatch = |expected, actual| Error::DimensionMismatch { expected, actual };
        if self.intercepts.len() != dims.strata {
            return Err(mismatch(dims.strata, self.intercepts.len()));
        }
        if self.overdispersion.len() != dims.cells() {
            return Err(mismatch(dims.cells(), self.overdispersion.len()));
        }
        for f in Family::ALL {
            let b = self.effects(f);
            if b.len() != dims.len_of(f) {
                return Err(mismatch(dims.len_of(f), b.len()));
            }
            if b.strata() != 1 && b.strata() != dims.strata {
                return Err(mismatch(dims.strata, b.strata()));
            }
        }
        Ok(())
    }

    /// `mu_r + theta + phi + psi` at every cell (no overdispersion).
    pub fn structured_predictor(&self, dims: Dims) -> Vec<f64> {
        let mut m = vec![0.0; dims.cells()];
        for i in 0..dims.ages {
            for j in 0..dims.periods {
                let k = dims.cohort_of(i, j);
                for r in 0..dims.strata {
                    m[dims.cell(i, j, r)] = self.intercepts[r]
                        + self.age.get(i, r)
                        + self.period.get(j, r)
                        + self.cohort.get(k, r);
                }
            }
        }
        m
    }

    /// Exchangeable correlation of `c` across the strata of its block.
    pub fn correlation(&self, c: Component, spec: &ApcModelSpec, strata: usize) -> Result<UniformCorrelation> {
        let fs = spec.component(c);
        match fs.sharing {
            Sharing::Shared => Ok(UniformCorrelation::identity(1)),
            Sharing::Independent => Ok(UniformCorrelation::identity(strata)),
            Sharing::Correlated => match fs.fixed_rho {
                Some(rho) => UniformCorrelation::new(strata, rho),
                None => UniformCorrelation::from_fisher_z(strata, self.hyper.rho_star(c)),
            },
        }
    }

    /// Adds the centred trend shift `(+M c, -c, +c)` to age, period and
    /// cohort. The linear predictor is unchanged; only non-identifiable
    /// parameters move.
    pub fn shift_unidentified_trend(&mut self, dims: Dims, c: f64) {
        let factors = [
            (Family::Age, dims.width_ratio as f64),
            (Family::Period, -1.0),
            (Family::Cohort, 1.0),
        ];
        for (f, factor) in factors {
            let block = self.effects_mut(f);
            let len = block.len();
            let centre = (len as f64 - 1.0) / 2.0;
            for (idx, v) in block.values_mut().iter_mut().enumerate() {
                let t = (idx % len) as f64;
                *v += factor * c * (t - centre);
            }
        }
    }

    /// Largest sum-to-zero / trend constraint residual over all families.
    pub fn max_constraint_residual(&self, dims: Dims, spec: &ApcModelSpec) -> f64 {
        Family::ALL
            .iter()
            .map(|&f| family_constraints(dims, spec, f).max_residual(self.effects(f).values()))
            .fold(0.0, f64::max)
    }
}

/// Linear predictor `eta = mu_r + theta + phi + psi + z` at every cell.
pub fn linear_predictor(state: &ApcState, dims: Dims) -> Result<Vec<f64>> {
    state.check_dims(dims)?;
    let mut eta = state.structured_predictor(dims);
    for (e, z) in eta.iter_mut().zip(&state.overdispersion) {
        *e += z;
    }
    Ok(eta)
}

/// Constraints on a family block: sum-to-zero per stratum vector (unless
/// the intercepts are dropped for this family) plus the optional
/// linear-trend pin.
pub fn family_constraints(dims: Dims, spec: &ApcModelSpec, f: Family) -> LinearConstraintSet {
    let len = dims.len_of(f);
    let strata = if spec.family(f).sharing == Sharing::Shared {
        1
    } else {
        dims.strata
    };
    let mut cons = LinearConstraintSet::empty(len * strata);
    let sum_to_zero = spec.unconstrained_family() != Some(f);
    let trend = spec.trend_pinned_family() == Some(f);
    for r in 0..strata {
        if sum_to_zero {
            cons.push_sum_to_zero(r * len, len)
                .expect("sum-to-zero rows on disjoint blocks are independent");
        }
        if trend {
            cons.push_zero_linear_trend(r * len, len)
                .expect("centred trend is orthogonal to the constant");
        }
    }
    cons
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::ApcModelSpec;

    fn dims() -> Dims {
        Dims::new(4, 5, 2, 2).unwrap()
    }

    #[test]
    fn constant_intercept_state() {
        let d = dims();
        let spec = ApcModelSpec::default();
        let mut s = ApcState::zeros(d, &spec);
        s.intercepts = vec![-3.0, -3.0];
        assert!(linear_predictor(&s, d).unwrap().iter().all(|&e| e == -3.0));
    }

    #[test]
    fn single_shared_age_effect() {
        let d = dims();
        let spec = ApcModelSpec::default();
        let mut s = ApcState::zeros(d, &spec);
        s.age.values_mut()[2] = 0.5;
        let eta = linear_predictor(&s, d).unwrap();
        for i in 0..d.ages {
            for j in 0..d.periods {
                for r in 0..d.strata {
                    let want = if i == 2 { 0.5 } else { 0.0 };
                    assert_eq!(eta[d.cell(i, j, r)], want);
                }
            }
        }
    }

    #[test]
    fn trend_shift_leaves_predictor_unchanged() {
        let d = dims();
        let spec = ApcModelSpec::default();
        let mut s = ApcState::zeros(d, &spec);
        for (idx, v) in s.period.values_mut().iter_mut().enumerate() {
            *v = (idx as f64 * 0.37).sin();
        }
        let before = linear_predictor(&s, d).unwrap();
        s.shift_unidentified_trend(d, 0.8);
        let after = linear_predictor(&s, d).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let d = dims();
        let s = ApcState::zeros(d, &ApcModelSpec::default());
        assert!(linear_predictor(&s, Dims::new(4, 6, 2, 2).unwrap()).is_err());
    }

    #[test]
    fn constraint_layout() {
        let d = dims();
        let mut spec = ApcModelSpec::default();
        spec.pin_linear_trend = true;
        // Age is shared: one sum-to-zero plus one trend row.
        assert_eq!(family_constraints(d, &spec, Family::Age).len(), 2);
        assert_eq!(family_constraints(d, &spec, Family::Period).len(), 2);
        spec.pin_linear_trend = false;
        spec.drop_intercept = true;
        assert_eq!(family_constraints(d, &spec, Family::Period).len(), 0);
        assert_eq!(family_constraints(d, &spec, Family::Cohort).len(), 2);
    }
}
