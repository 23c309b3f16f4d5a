use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ApcState, Dims, Family};
use crate::sampler::PosteriorSamples;

/// How stratum contrasts are averaged into relative risks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelativeRiskAverage {
    /// `exp(x_{t,r} - x_{t,r0})` of the effect itself.
    #[default]
    EffectDifference,
    /// `exp` of the stratum difference of the structured predictor
    /// (intercept plus effects, no overdispersion) averaged over all cells
    /// sharing the position.
    PredictorAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRiskBand {
    pub family: Family,
    pub stratum: usize,
    pub position: usize,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Type-7 quantile of sorted data.
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn band(family: Family, stratum: usize, position: usize, mut draws: Vec<f64>) -> RelativeRiskBand {
    draws.sort_by(f64::total_cmp);
    RelativeRiskBand {
        family,
        stratum,
        position,
        median: sorted_quantile(&draws, 0.5),
        lower: sorted_quantile(&draws, 0.025),
        upper: sorted_quantile(&draws, 0.975),
    }
}

/// Per-draw log relative risks of stratum `r` against `r0` for one
/// family, indexed by position.
pub fn log_relative_risk(
    state: &ApcState,
    dims: Dims,
    family: Family,
    r: usize,
    r0: usize,
    mode: RelativeRiskAverage,
) -> Vec<f64> {
    let len = dims.len_of(family);
    match mode {
        RelativeRiskAverage::EffectDifference => {
            let e = state.effects(family);
            (0..len).map(|t| e.get(t, r) - e.get(t, r0)).collect()
        }
        RelativeRiskAverage::PredictorAverage => {
            let m = state.structured_predictor(dims);
            let mut sum = vec![0.0; len];
            let mut count = vec![0usize; len];
            for i in 0..dims.ages {
                for j in 0..dims.periods {
                    let t = dims.position(family, i, j);
                    sum[t] += m[dims.cell(i, j, r)] - m[dims.cell(i, j, r0)];
                    count[t] += 1;
                }
            }
            sum.iter().zip(&count).map(|(s, c)| s / *c as f64).collect()
        }
    }
}

/// Posterior median and pointwise 95% bands of stratum relative risks
/// against reference stratum `r0`, for every stratum-specific family.
/// Refused unless at least one family is shared, since otherwise the
/// contrasts are not identified.
pub fn relative_risks(samples: &PosteriorSamples, r0: usize, mode: RelativeRiskAverage) -> Result<Vec<RelativeRiskBand>> {
    let dims = samples.dims;
    if !samples.spec.has_shared_family() {
        return Err(Error::NotIdentifiable(
            "stratum differences need at least one shared age, period or cohort family".into(),
        ));
    }
    if r0 >= dims.strata {
        return Err(Error::OutOfRange(format!("reference stratum {r0} of {}", dims.strata)));
    }
    if samples.draw_count() == 0 {
        return Err(Error::Empty("posterior has no retained draws".into()));
    }
    let mut out = Vec::new();
    for family in Family::ALL {
        if !samples.spec.family(family).is_stratum_specific() {
            continue;
        }
        let len = dims.len_of(family);
        for r in 0..dims.strata {
            let mut per_pos = vec![Vec::with_capacity(samples.draw_count()); len];
            for state in samples.draws() {
                for (t, v) in log_relative_risk(state, dims, family, r, r0, mode).into_iter().enumerate() {
                    per_pos[t].push(v.exp());
                }
            }
            for (t, draws) in per_pos.into_iter().enumerate() {
                out.push(band(family, r, t, draws));
            }
        }
    }
    Ok(out)
}
