//! Sample archive: a flat binary file of little-endian `f64` records, one
//! per retained draw (chains in order, draws in order within a chain), and
//! a JSON sidecar index describing the record layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ApcState, Dims, EffectBlock, Hyperparameters};
use crate::sampler::PosteriorSamples;

use super::atomic_write;

pub const ARCHIVE_FORMAT: &str = "mapc-samples";
pub const ARCHIVE_VERSION: u32 = 1;

/// A named run of `len` consecutive values inside a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Number of strata the block carries (1 when shared).
    pub strata: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub format: String,
    pub version: u32,
    pub byte_order: String,
    pub record_len: usize,
    pub dims: Dims,
    /// Retained draws of each chain.
    pub chain_draws: Vec<usize>,
    pub fields: Vec<Field>,
    /// Free-form `key=value` provenance, such as a config hash and seed.
    #[serde(default)]
    pub provenance: Vec<(String, String)>,
}

impl ArchiveIndex {
    pub fn records(&self) -> usize {
        self.chain_draws.iter().sum()
    }
}

fn layout(state: &ApcState, dims: Dims) -> Vec<Field> {
    let mut fields = Vec::new();
    let mut offset = 0;
    let mut push = |name: &str, len: usize, strata: usize| {
        fields.push(Field {
            name: name.to_string(),
            offset,
            len,
            strata,
        });
        offset += len;
    };
    push("intercept", dims.strata, dims.strata);
    for (name, b) in [("age", &state.age), ("period", &state.period), ("cohort", &state.cohort)] {
        push(name, b.values().len(), b.strata());
    }
    push("overdispersion", dims.cells(), dims.strata);
    push("precision", 4, 1);
    push("rho_star", 4, 1);
    fields
}

fn flatten(state: &ApcState, out: &mut Vec<u8>) {
    let h = &state.hyper;
    let parts: [&[f64]; 7] = [
        &state.intercepts,
        state.age.values(),
        state.period.values(),
        state.cohort.values(),
        &state.overdispersion,
        &h.precision,
        &h.rho_star,
    ];
    for part in parts {
        for v in part {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serializes the draws and the index. Returns `(records, index JSON)`.
pub fn encode_archive(samples: &PosteriorSamples, provenance: &[(&str, String)]) -> Result<(Vec<u8>, String)> {
    let first = samples
        .draws()
        .next()
        .ok_or_else(|| Error::Empty("posterior has no retained draws".into()))?;
    let fields = layout(first, samples.dims);
    let record_len: usize = fields.iter().map(|f| f.len).sum();
    let mut bytes = Vec::with_capacity(record_len * 8 * samples.draw_count());
    for s in samples.draws() {
        flatten(s, &mut bytes);
    }
    let index = ArchiveIndex {
        format: ARCHIVE_FORMAT.into(),
        version: ARCHIVE_VERSION,
        byte_order: "little-endian f64".into(),
        record_len,
        dims: samples.dims,
        chain_draws: samples.chains.iter().map(|c| c.draws.len()).collect(),
        fields,
        provenance: provenance.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    };
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Io(e.to_string()))?;
    Ok((bytes, json))
}

/// Writes the record file and its index atomically.
pub fn write_sample_archive(
    samples: &PosteriorSamples,
    bin: &Path,
    index: &Path,
    provenance: &[(&str, String)],
) -> Result<()> {
    let (bytes, json) = encode_archive(samples, provenance)?;
    atomic_write(bin, &bytes)?;
    atomic_write(index, json.as_bytes())
}

fn field<'a>(index: &'a ArchiveIndex, name: &str) -> Result<&'a Field> {
    index
        .fields
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::Parse {
            row: 0,
            message: format!("archive index lacks field {name}"),
        })
}

/// Decodes an archive back into states, grouped by chain.
pub fn decode_archive(bytes: &[u8], index: &ArchiveIndex) -> Result<Vec<Vec<ApcState>>> {
    if index.format != ARCHIVE_FORMAT || index.version != ARCHIVE_VERSION {
        return Err(Error::Parse {
            row: 0,
            message: format!("unsupported archive {} v{}", index.format, index.version),
        });
    }
    let expected = index.records() * index.record_len * 8;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    let dims = index.dims;
    let get = |rec: &[f64], name: &str| -> Result<(Vec<f64>, usize)> {
        let f = field(index, name)?;
        Ok((rec[f.offset..f.offset + f.len].to_vec(), f.strata))
    };
    let block = |rec: &[f64], name: &str, len: usize| -> Result<EffectBlock> {
        let (v, strata) = get(rec, name)?;
        EffectBlock::from_values(len, strata, v)
    };
    let mut chains = Vec::with_capacity(index.chain_draws.len());
    let mut records = values.chunks_exact(index.record_len);
    for &n in &index.chain_draws {
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let rec = records.next().expect("length checked above");
            let precision: [f64; 4] = get(rec, "precision")?.0.try_into().map_err(|_| Error::Parse {
                row: 0,
                message: "precision field must hold 4 values".into(),
            })?;
            let rho_star: [f64; 4] = get(rec, "rho_star")?.0.try_into().map_err(|_| Error::Parse {
                row: 0,
                message: "rho_star field must hold 4 values".into(),
            })?;
            draws.push(ApcState {
                intercepts: get(rec, "intercept")?.0,
                age: block(rec, "age", dims.ages)?,
                period: block(rec, "period", dims.periods)?,
                cohort: block(rec, "cohort", dims.cohorts())?,
                overdispersion: get(rec, "overdispersion")?.0,
                hyper: Hyperparameters { precision, rho_star },
            });
        }
        chains.push(draws);
    }
    Ok(chains)
}

pub fn read_sample_archive(bin: &Path, index: &Path) -> Result<(ArchiveIndex, Vec<Vec<ApcState>>)> {
    let idx: ArchiveIndex = serde_json::from_slice(&std::fs::read(index)?).map_err(|e| Error::Parse {
        row: e.line(),
        message: e.to_string(),
    })?;
    let chains = decode_archive(&std::fs::read(bin)?, &idx)?;
    Ok((idx, chains))
}
