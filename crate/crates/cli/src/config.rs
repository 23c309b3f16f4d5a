use std::path::{Path, PathBuf};

use mapc_core::forecast::RelativeRiskAverage;
use mapc_core::leecarter::LeeCarterOptions;
use mapc_core::model::ApcModelSpec;
use mapc_core::sampler::SamplerConfig;
use mapc_core::synth::SynthConfig;
use mapc_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Cell CSV.
    pub table: Option<PathBuf>,
    pub width_ratio: usize,
    /// Yearly population CSV replacing the `person_years` column.
    pub yearly_population: Option<PathBuf>,
    pub bin_width: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            table: None,
            width_ratio: 1,
            yearly_population: None,
            bin_width: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Held-out blocks as `stratum:first-last` (one-based, inclusive).
    pub mask: Vec<String>,
    pub levels: Vec<f64>,
    pub reference_stratum: usize,
    pub relative_risk: RelativeRiskAverage,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            mask: Vec::new(),
            levels: vec![0.5, 0.8, 0.95],
            reference_stratum: 1,
            relative_risk: RelativeRiskAverage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossPredConfig {
    pub lee_carter_draws: usize,
}

impl Default for CrossPredConfig {
    fn default() -> Self {
        Self { lee_carter_draws: 10_000 }
    }
}

/// Everything a command needs. Precedence: command-line flags, then the
/// config file, then these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub input: InputConfig,
    pub model: ApcModelSpec,
    pub sampler: SamplerConfig,
    pub forecast: ForecastConfig,
    pub crosspred: CrossPredConfig,
    pub lee_carter: LeeCarterOptions,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: PathBuf::from("out"),
            input: InputConfig::default(),
            model: ApcModelSpec::default(),
            sampler: SamplerConfig::default(),
            forecast: ForecastConfig::default(),
            crosspred: CrossPredConfig::default(),
            lee_carter: LeeCarterOptions::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            row: e.span().map_or(0, |s| text[..s.start].lines().count()),
            message: e.message().to_string(),
        })?;
        // Relative input paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.input.table, &mut cfg.input.yearly_population].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Seeds every random component from the top-level seed.
    pub fn propagate_seed(&mut self) {
        self.sampler.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        for &l in &self.forecast.levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::InvalidParameter(format!("level {l} outside (0, 1)")));
            }
        }
        for p in [&self.input.table, &self.input.yearly_population].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Io(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering of the effective config.
    pub fn hash(&self) -> Result<String> {
        let text = toml::to_string(self).map_err(|e| Error::Io(e.to_string()))?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// One-based inclusive `stratum:first-last` (or `stratum:period`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskBlock {
    pub stratum: usize,
    pub first: usize,
    pub last: usize,
}

impl std::str::FromStr for MaskBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("mask {s:?} is not stratum:first-last"));
        let (r, range) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = range.split_once('-').unwrap_or((range, range));
        let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|v| *v >= 1).ok_or_else(bad);
        let block = MaskBlock {
            stratum: parse(r)?,
            first: parse(a)?,
            last: parse(b)?,
        };
        if block.first > block.last {
            return Err(bad());
        }
        Ok(block)
    }
}
