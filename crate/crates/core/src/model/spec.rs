use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::UniformCorrelation;

/// Time-effect families carrying an RW2 prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Age,
    Period,
    Cohort,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Age, Family::Period, Family::Cohort];

    pub fn component(self) -> Component {
        match self {
            Family::Age => Component::Age,
            Family::Period => Component::Period,
            Family::Cohort => Component::Cohort,
        }
    }

    pub fn name(self) -> &'static str {
        self.component().name()
    }
}

/// Everything with its own precision and (optionally) correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Age,
    Period,
    Cohort,
    Overdispersion,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Age,
        Component::Period,
        Component::Cohort,
        Component::Overdispersion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Age => "age",
            Component::Period => "period",
            Component::Cohort => "cohort",
            Component::Overdispersion => "overdispersion",
        }
    }

    pub fn family(self) -> Option<Family> {
        match self {
            Component::Age => Some(Family::Age),
            Component::Period => Some(Family::Period),
            Component::Cohort => Some(Family::Cohort),
            Component::Overdispersion => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One effect vector common to all strata.
    Shared,
    /// One vector per stratum, a priori independent (rho fixed at 0).
    Independent,
    /// One vector per stratum, exchangeably correlated.
    Correlated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionPrior {
    /// Gamma(shape, rate); mean shape / rate.
    Gamma { shape: f64, rate: f64 },
    /// Held at a known value and never updated.
    Fixed(f64),
}

impl PrecisionPrior {
    pub fn log_density(&self, kappa: f64) -> f64 {
        match *self {
            PrecisionPrior::Gamma { shape, rate } => {
                if kappa <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - statrs::function::gamma::ln_gamma(shape)
                    + (shape - 1.0) * kappa.ln()
                    - rate * kappa
            }
            PrecisionPrior::Fixed(_) => 0.0,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            PrecisionPrior::Gamma { shape, rate } => {
                shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()
            }
            PrecisionPrior::Fixed(v) => v > 0.0 && v.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{what}: invalid precision prior {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub sharing: Sharing,
    pub precision: PrecisionPrior,
    /// Precision of the zero-mean Gaussian prior on the Fisher-z scale.
    #[serde(default = "default_rho_star_precision")]
    pub rho_star_precision: f64,
    /// Known correlation for a correlated family; disables its update.
    #[serde(default)]
    pub fixed_rho: Option<f64>,
}

fn default_rho_star_precision() -> f64 {
    0.2
}

pub const TIME_PRECISION_PRIOR: PrecisionPrior = PrecisionPrior::Gamma {
    shape: 1.0,
    rate: 0.00005,
};
pub const OVERDISPERSION_PRECISION_PRIOR: PrecisionPrior = PrecisionPrior::Gamma {
    shape: 1.0,
    rate: 0.005,
};

impl FamilySpec {
    pub fn time(sharing: Sharing) -> Self {
        Self {
            sharing,
            precision: TIME_PRECISION_PRIOR,
            rho_star_precision: default_rho_star_precision(),
            fixed_rho: None,
        }
    }

    pub fn overdispersion(sharing: Sharing) -> Self {
        Self {
            precision: OVERDISPERSION_PRECISION_PRIOR,
            ..Self::time(sharing)
        }
    }

    pub fn with_precision(mut self, precision: PrecisionPrior) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_fixed_rho(mut self, rho: f64) -> Self {
        self.fixed_rho = Some(rho);
        self
    }

    pub fn is_stratum_specific(&self) -> bool {
        self.sharing != Sharing::Shared
    }

    /// Whether the correlation is a free parameter for `strata` strata.
    pub fn updates_correlation(&self, strata: usize) -> bool {
        self.sharing == Sharing::Correlated && self.fixed_rho.is_none() && strata > 1
    }
}

/// Which effects are shared or stratum-specific, and their hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApcModelSpec {
    pub age: FamilySpec,
    pub period: FamilySpec,
    pub cohort: FamilySpec,
    pub overdispersion: FamilySpec,
    /// Add a zero-linear-trend constraint that removes the linear-trend
    /// directions left unidentified by sum-to-zero constraints. Identifiable
    /// functionals are unaffected.
    #[serde(default)]
    pub pin_linear_trend: bool,
    /// Drop the intercepts and the sum-to-zero constraint of the first
    /// stratum-specific family.
    #[serde(default)]
    pub drop_intercept: bool,
}

impl Default for ApcModelSpec {
    /// Common age effects with correlated period, cohort and
    /// overdispersion.
    fn default() -> Self {
        Self {
            age: FamilySpec::time(Sharing::Shared),
            period: FamilySpec::time(Sharing::Correlated),
            cohort: FamilySpec::time(Sharing::Correlated),
            overdispersion: FamilySpec::overdispersion(Sharing::Correlated),
            pin_linear_trend: false,
            drop_intercept: false,
        }
    }
}

impl ApcModelSpec {
    /// Every family stratum-specific and a priori independent.
    pub fn independent() -> Self {
        Self {
            age: FamilySpec::time(Sharing::Independent),
            period: FamilySpec::time(Sharing::Independent),
            cohort: FamilySpec::time(Sharing::Independent),
            overdispersion: FamilySpec::overdispersion(Sharing::Independent),
            pin_linear_trend: false,
            drop_intercept: false,
        }
    }

    /// Every family stratum-specific and correlated.
    pub fn correlated() -> Self {
        Self {
            age: FamilySpec::time(Sharing::Correlated),
            ..Self::default()
        }
    }

    pub fn component(&self, c: Component) -> &FamilySpec {
        match c {
            Component::Age => &self.age,
            Component::Period => &self.period,
            Component::Cohort => &self.cohort,
            Component::Overdispersion => &self.overdispersion,
        }
    }

    pub fn component_mut(&mut self, c: Component) -> &mut FamilySpec {
        match c {
            Component::Age => &mut self.age,
            Component::Period => &mut self.period,
            Component::Cohort => &mut self.cohort,
            Component::Overdispersion => &mut self.overdispersion,
        }
    }

    pub fn family(&self, f: Family) -> &FamilySpec {
        self.component(f.component())
    }

    /// Stratum differences are identifiable when some time family is shared.
    pub fn has_shared_family(&self) -> bool {
        Family::ALL
            .iter()
            .any(|f| self.family(*f).sharing == Sharing::Shared)
    }

    /// The family whose sum-to-zero constraint is dropped under
    /// `drop_intercept`.
    pub fn unconstrained_family(&self) -> Option<Family> {
        if !self.drop_intercept {
            return None;
        }
        Family::ALL
            .into_iter()
            .find(|f| self.family(*f).is_stratum_specific())
    }

    /// The family carrying the extra linear-trend constraint: the first
    /// shared family, else age in every stratum.
    pub fn trend_pinned_family(&self) -> Option<Family> {
        if !self.pin_linear_trend {
            return None;
        }
        Some(
            Family::ALL
                .into_iter()
                .find(|f| self.family(*f).sharing == Sharing::Shared)
                .unwrap_or(Family::Age),
        )
    }

    pub fn validate(&self, strata: usize) -> Result<()> {
        if self.overdispersion.sharing == Sharing::Shared {
            return Err(Error::InvalidParameter(
                "overdispersion must be stratum-specific (independent or correlated)".into(),
            ));
        }
        for c in Component::ALL {
            let f = self.component(c);
            f.precision.validate(c.name())?;
            if !(f.rho_star_precision >= 0.0 && f.rho_star_precision.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{}: rho* prior precision must be nonnegative",
                    c.name()
                )));
            }
            if let Some(rho) = f.fixed_rho {
                UniformCorrelation::new(strata, rho)?;
            }
        }
        if self.drop_intercept && self.unconstrained_family().is_none() {
            return Err(Error::InvalidParameter(
                "drop_intercept needs at least one stratum-specific time family".into(),
            ));
        }
        if self.drop_intercept && self.pin_linear_trend {
            return Err(Error::InvalidParameter(
                "drop_intercept and pin_linear_trend cannot be combined".into(),
            ));
        }
        Ok(())
    }
}

/// Observation model at observed cells.
#[derive(Debug, Clone, PartialEq)]
pub enum Likelihood {
    /// `y ~ Poisson(n exp(eta))`.
    Poisson,
    /// Gaussian pseudo-observations `v ~ N(eta, 1/precision)`, indexed like
    /// the table cells. Used for conjugate checks.
    Gaussian { values: Vec<f64>, precision: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperpriors() {
        let s = ApcModelSpec::default();
        assert_eq!(
            s.period.precision,
            PrecisionPrior::Gamma {
                shape: 1.0,
                rate: 0.00005
            }
        );
        assert_eq!(
            s.overdispersion.precision,
            PrecisionPrior::Gamma {
                shape: 1.0,
                rate: 0.005
            }
        );
        assert_eq!(s.cohort.rho_star_precision, 0.2);
        // Ga(1, 0.00005) has mean 20,000 under the (shape, rate) convention.
        if let PrecisionPrior::Gamma { shape, rate } = s.age.precision {
            assert!((shape / rate - 20_000.0).abs() < 1e-9);
        }
        assert!(s.validate(3).is_ok());
    }

    #[test]
    fn shared_overdispersion_rejected() {
        let mut s = ApcModelSpec::default();
        s.overdispersion.sharing = Sharing::Shared;
        assert!(s.validate(2).is_err());
    }

    #[test]
    fn gamma_log_density() {
        let p = PrecisionPrior::Gamma {
            shape: 2.0,
            rate: 3.0,
        };
        // 3^2 / Gamma(2) * k * exp(-3k) at k = 1
        let expected: f64 = 9f64.ln() - 3.0;
        assert!((p.log_density(1.0) - expected).abs() < 1e-12);
        assert_eq!(p.log_density(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn trend_and_intercept_choices() {
        let mut s = ApcModelSpec::default();
        assert_eq!(s.trend_pinned_family(), None);
        s.pin_linear_trend = true;
        assert_eq!(s.trend_pinned_family(), Some(Family::Age));
        let mut s = ApcModelSpec::independent();
        s.pin_linear_trend = true;
        assert_eq!(s.trend_pinned_family(), Some(Family::Age));
        let mut s = ApcModelSpec::default();
        s.drop_intercept = true;
        assert_eq!(s.unconstrained_family(), Some(Family::Period));
    }
}
