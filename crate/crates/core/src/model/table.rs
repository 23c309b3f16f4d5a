use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid shape of a registry: `ages x periods x strata`, with age groups
/// `width_ratio` times wider than periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub ages: usize,
    pub periods: usize,
    pub strata: usize,
    pub width_ratio: usize,
}

impl Dims {
    pub fn new(ages: usize, periods: usize, strata: usize, width_ratio: usize) -> Result<Self> {
        if ages == 0 || periods == 0 || strata == 0 || width_ratio == 0 {
            return Err(Error::InvalidDimension(format!(
                "all dimensions must be positive: I={ages}, J={periods}, R={strata}, M={width_ratio}"
            )));
        }
        Ok(Self {
            ages,
            periods,
            strata,
            width_ratio,
        })
    }

    /// `K = M (I - 1) + J`.
    pub fn cohorts(&self) -> usize {
        self.width_ratio * (self.ages - 1) + self.periods
    }

    pub fn cells(&self) -> usize {
        self.ages * self.periods * self.strata
    }

    /// Number of (age, period) blocks, each an R-vector.
    pub fn blocks(&self) -> usize {
        self.ages * self.periods
    }

    /// Flat index of cell `(i, j, r)`, zero-based. Strata are innermost so
    /// each (age, period) block is contiguous.
    #[inline]
    pub fn cell(&self, i: usize, j: usize, r: usize) -> usize {
        (i * self.periods + j) * self.strata + r
    }

    #[inline]
    pub fn block(&self, i: usize, j: usize) -> usize {
        i * self.periods + j
    }

    /// Zero-based cohort of zero-based `(i, j)`.
    #[inline]
    pub fn cohort_of(&self, i: usize, j: usize) -> usize {
        self.width_ratio * (self.ages - 1 - i) + j
    }

    pub fn len_of(&self, family: crate::model::Family) -> usize {
        use crate::model::Family;
        match family {
            Family::Age => self.ages,
            Family::Period => self.periods,
            Family::Cohort => self.cohorts(),
        }
    }

    /// Index along `family`'s axis of zero-based `(i, j)`.
    #[inline]
    pub fn position(&self, family: crate::model::Family, i: usize, j: usize) -> usize {
        use crate::model::Family;
        match family {
            Family::Age => i,
            Family::Period => j,
            Family::Cohort => self.cohort_of(i, j),
        }
    }
}

/// One-based cohort index `k = M (I - i) + j`.
pub fn cohort_index(i: usize, j: usize, ages: usize, periods: usize, width_ratio: usize) -> Result<usize> {
    if i == 0 || i > ages {
        return Err(Error::OutOfRange(format!("age index {i} outside 1..={ages}")));
    }
    if j == 0 || j > periods {
        return Err(Error::OutOfRange(format!("period index {j} outside 1..={periods}")));
    }
    if width_ratio == 0 {
        return Err(Error::InvalidParameter("width ratio must be positive".into()));
    }
    Ok(width_ratio * (ages - i) + j)
}

/// Death counts and person-years over an age x period x stratum grid.
/// `deaths[c]` is `None` where the cell is unobserved (missing or masked);
/// exposures are always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryTable {
    dims: Dims,
    deaths: Vec<Option<u64>>,
    exposure: Vec<f64>,
}

impl RegistryTable {
    pub fn new(dims: Dims, deaths: Vec<Option<u64>>, exposure: Vec<f64>) -> Result<Self> {
        let n = dims.cells();
        for len in [deaths.len(), exposure.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        if let Some((c, e)) = exposure
            .iter()
            .enumerate()
            .find(|(_, e)| !(e.is_finite() && **e > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "exposure must be positive and finite, cell {c} has {e}"
            )));
        }
        Ok(Self {
            dims,
            deaths,
            exposure,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn deaths(&self) -> &[Option<u64>] {
        &self.deaths
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    pub fn get(&self, i: usize, j: usize, r: usize) -> (Option<u64>, f64) {
        let c = self.dims.cell(i, j, r);
        (self.deaths[c], self.exposure[c])
    }

    pub fn is_observed(&self, cell: usize) -> bool {
        self.deaths[cell].is_some()
    }

    pub fn missing_count(&self) -> usize {
        self.deaths.iter().filter(|d| d.is_none()).count()
    }

    /// Copy with the given cells hidden.
    pub fn masked(&self, cells: impl IntoIterator<Item = usize>) -> Self {
        let mut out = self.clone();
        for c in cells {
            out.deaths[c] = None;
        }
        out
    }

    /// Copy with the period axis (and, to keep cohorts on diagonals, the
    /// age axis) reversed. Cohort `k` maps to `K + 1 - k`.
    pub fn time_reversed(&self) -> Self {
        let d = self.dims;
        let mut deaths = vec![None; d.cells()];
        let mut exposure = vec![0.0; d.cells()];
        for i in 0..d.ages {
            for j in 0..d.periods {
                for r in 0..d.strata {
                    let src = d.cell(i, j, r);
                    let dst = d.cell(d.ages - 1 - i, d.periods - 1 - j, r);
                    deaths[dst] = self.deaths[src];
                    exposure[dst] = self.exposure[src];
                }
            }
        }
        Self {
            dims: d,
            deaths,
            exposure,
        }
    }

    /// Single-stratum slice as row-major `ages x periods` matrices of
    /// deaths (None where unobserved) and exposures.
    pub fn stratum_slice(&self, r: usize) -> Result<(Vec<Option<u64>>, Vec<f64>)> {
        if r >= self.dims.strata {
            return Err(Error::OutOfRange(format!("stratum {r} of {}", self.dims.strata)));
        }
        let d = self.dims;
        let mut deaths = Vec::with_capacity(d.ages * d.periods);
        let mut exposure = Vec::with_capacity(d.ages * d.periods);
        for i in 0..d.ages {
            for j in 0..d.periods {
                let c = d.cell(i, j, r);
                deaths.push(self.deaths[c]);
                exposure.push(self.exposure[c]);
            }
        }
        Ok((deaths, exposure))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_index_examples() {
        assert_eq!(cohort_index(7, 1, 7, 50, 10).unwrap(), 1);
        assert_eq!(cohort_index(1, 1, 7, 50, 10).unwrap(), 61);
        assert_eq!(cohort_index(5, 3, 17, 20, 1).unwrap(), 15);
        assert_eq!(Dims::new(7, 50, 2, 10).unwrap().cohorts(), 110);
        assert!(cohort_index(0, 1, 7, 50, 10).is_err());
        assert!(cohort_index(1, 51, 7, 50, 10).is_err());
    }

    #[test]
    fn zero_based_cohort_agrees() {
        let d = Dims::new(4, 6, 1, 3).unwrap();
        for i in 0..4 {
            for j in 0..6 {
                assert_eq!(d.cohort_of(i, j) + 1, cohort_index(i + 1, j + 1, 4, 6, 3).unwrap());
            }
        }
        assert_eq!(d.cohort_of(0, 5) + 1, d.cohorts());
    }

    #[test]
    fn rejects_bad_exposure() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        assert!(RegistryTable::new(d, vec![Some(1)], vec![0.0]).is_err());
        assert!(RegistryTable::new(d, vec![Some(1)], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn time_reversal_maps_cohorts_to_mirror() {
        let d = Dims::new(3, 4, 1, 2).unwrap();
        let deaths: Vec<Option<u64>> = (0..12).map(Some).collect();
        let t = RegistryTable::new(d, deaths, vec![1.0; 12]).unwrap();
        let rev = t.time_reversed();
        assert_eq!(rev.get(2, 3, 0), t.get(0, 0, 0));
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(
                    d.cohort_of(2 - i, 3 - j),
                    d.cohorts() - 1 - d.cohort_of(i, j)
                );
            }
        }
        assert_eq!(rev.time_reversed(), t);
    }
}
