use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::PredictiveSummary;
use crate::model::{Dims, RegistryTable};

pub const CELL_HEADER: [&str; 5] = ["stratum", "age_index", "period_index", "deaths", "person_years"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub cells: usize,
    pub ages: usize,
    pub periods: usize,
    pub strata: usize,
    pub width_ratio: usize,
    pub missing: usize,
    /// One line per interpolated exposure, empty unless yearly
    /// populations were supplied.
    pub interpolation_log: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct CellRow {
    stratum: usize,
    age_index: usize,
    period_index: usize,
    deaths: Option<String>,
    person_years: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PopulationRow {
    stratum: usize,
    age_index: usize,
    year: i64,
    population: f64,
}

/// Mid-year person-years of consecutive yearly populations (counted at
/// the start of each year), summed over bins of `bin_width` years.
/// `populations` needs `bins * bin_width + 1` entries.
pub fn person_years_from_yearly(populations: &[f64], bin_width: usize) -> Result<Vec<f64>> {
    if bin_width == 0 {
        return Err(Error::InvalidParameter("bin width must be positive".into()));
    }
    if populations.len() < 2 || (populations.len() - 1) % bin_width != 0 {
        return Err(Error::InvalidDimension(format!(
            "{} yearly populations do not fill bins of {bin_width} years",
            populations.len()
        )));
    }
    let mid: Vec<f64> = populations.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    Ok(mid.chunks(bin_width).map(|c| c.iter().sum()).collect())
}

fn parse_row_error(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

/// Exposure per `(stratum, age, period)` (one-based) from a yearly
/// population CSV with columns `stratum, age_index, year, population`.
pub fn read_yearly_population<R: Read>(
    reader: R,
    bin_width: usize,
    log: &mut Vec<String>,
) -> Result<BTreeMap<(usize, usize, usize), f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut series: BTreeMap<(usize, usize), Vec<(i64, f64)>> = BTreeMap::new();
    for (k, rec) in rdr.deserialize::<PopulationRow>().enumerate() {
        let row = k + 2;
        let r = rec.map_err(|e| parse_row_error(row, e.to_string()))?;
        if !(r.population >= 0.0) {
            return Err(parse_row_error(row, "population must be nonnegative"));
        }
        series.entry((r.stratum, r.age_index)).or_default().push((r.year, r.population));
    }
    let mut out = BTreeMap::new();
    for ((s, a), mut pts) in series {
        pts.sort_by_key(|p| p.0);
        if pts.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
            return Err(Error::InvalidDimension(format!(
                "stratum {s} age {a}: yearly populations must cover consecutive years"
            )));
        }
        let pops: Vec<f64> = pts.iter().map(|p| p.1).collect();
        for (j, py) in person_years_from_yearly(&pops, bin_width)?.into_iter().enumerate() {
            log.push(format!(
                "stratum={s} age={a} period={} years={}..{} person_years={py}",
                j + 1,
                pts[0].0 + (j * bin_width) as i64,
                pts[0].0 + ((j + 1) * bin_width) as i64
            ));
            out.insert((s, a, j + 1), py);
        }
    }
    Ok(out)
}

/// Reads the canonical cell CSV. Indices are one-based; an empty `deaths`
/// field marks a missing cell. When `exposures` is given, it supplies the
/// person-years of every cell and the `person_years` column may be empty.
pub fn read_registry_csv<R: Read>(
    reader: R,
    width_ratio: usize,
    exposures: Option<&BTreeMap<(usize, usize, usize), f64>>,
) -> Result<(RegistryTable, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: BTreeMap<(usize, usize, usize), (Option<u64>, f64)> = BTreeMap::new();
    for (k, rec) in rdr.deserialize::<CellRow>().enumerate() {
        let row = k + 2;
        let r = rec.map_err(|e| parse_row_error(row, e.to_string()))?;
        if r.stratum == 0 || r.age_index == 0 || r.period_index == 0 {
            return Err(parse_row_error(row, "indices are one-based"));
        }
        let key = (r.stratum, r.age_index, r.period_index);
        let deaths = match r.deaths.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<u64>().map_err(|_| {
                parse_row_error(row, format!("deaths must be a nonnegative integer, got {s:?}"))
            })?),
        };
        let exposure = match exposures {
            Some(map) => *map
                .get(&key)
                .ok_or_else(|| parse_row_error(row, "no yearly population for this cell"))?,
            None => {
                let s = r.person_years.as_deref().map(str::trim).unwrap_or("");
                s.parse::<f64>()
                    .map_err(|_| parse_row_error(row, format!("person_years must be a number, got {s:?}")))?
            }
        };
        if !(exposure > 0.0) || !exposure.is_finite() {
            return Err(parse_row_error(row, format!("person_years must be positive, got {exposure}")));
        }
        if rows.insert(key, (deaths, exposure)).is_some() {
            return Err(parse_row_error(row, "duplicate cell"));
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("registry CSV has no rows".into()));
    }
    let strata = rows.keys().map(|k| k.0).max().unwrap_or(0);
    let ages = rows.keys().map(|k| k.1).max().unwrap_or(0);
    let periods = rows.keys().map(|k| k.2).max().unwrap_or(0);
    if rows.len() != strata * ages * periods {
        return Err(Error::InvalidDimension(format!(
            "grid is not rectangular: {} rows for {strata} strata x {ages} ages x {periods} periods",
            rows.len()
        )));
    }
    let dims = Dims::new(ages, periods, strata, width_ratio)?;
    let mut deaths = vec![None; dims.cells()];
    let mut exposure = vec![0.0; dims.cells()];
    for ((s, a, p), (y, n)) in rows {
        let c = dims.cell(a - 1, p - 1, s - 1);
        deaths[c] = y;
        exposure[c] = n;
    }
    let table = RegistryTable::new(dims, deaths, exposure)?;
    let report = IngestReport {
        cells: dims.cells(),
        ages,
        periods,
        strata,
        width_ratio,
        missing: table.missing_count(),
        interpolation_log: Vec::new(),
    };
    Ok((table, report))
}

/// File-based [`read_registry_csv`], optionally with a yearly population
/// file and its bin width.
pub fn ingest_registry_csv(
    path: &Path,
    width_ratio: usize,
    yearly_population: Option<(&Path, usize)>,
) -> Result<(RegistryTable, IngestReport)> {
    let mut log = Vec::new();
    let exposures = match yearly_population {
        Some((p, width)) => Some(read_yearly_population(std::fs::File::open(p)?, width, &mut log)?),
        None => None,
    };
    let (table, mut report) = read_registry_csv(std::fs::File::open(path)?, width_ratio, exposures.as_ref())?;
    report.interpolation_log = log;
    Ok((table, report))
}

/// Writes `# key=value` header lines.
pub fn write_header<W: Write>(out: &mut W, header: &[(&str, String)]) -> Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

/// Reads the leading `# key=value` lines of a file.
pub fn read_header<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.trim().split_once('=') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Canonical cell CSV. Floats use the shortest round-trip representation.
pub fn write_registry_csv<W: Write>(table: &RegistryTable, out: W) -> Result<()> {
    let d = table.dims();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CELL_HEADER).map_err(csv_error)?;
    for r in 0..d.strata {
        for i in 0..d.ages {
            for j in 0..d.periods {
                let (y, n) = table.get(i, j, r);
                w.write_record([
                    (r + 1).to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    y.map(|v| v.to_string()).unwrap_or_default(),
                    n.to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Prediction CSV: the cell keys followed by `model, exposure, mean, sd,
/// rate_mean, rate_var` and one `q<p>` column per quantile probability.
pub fn write_predictions_csv<W: Write>(summaries: &[&PredictiveSummary], out: W) -> Result<()> {
    let probs = summaries.first().map(|s| s.probabilities.clone()).unwrap_or_default();
    if summaries.iter().any(|s| s.probabilities != probs) {
        return Err(Error::InvalidParameter("summaries use different quantile levels".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["model", "stratum", "age_index", "period_index", "person_years", "mean", "sd", "rate_mean", "rate_var"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(probs.iter().map(|p| format!("q{p}")));
    w.write_record(&header).map_err(csv_error)?;
    for s in summaries {
        for c in &s.cells {
            let mut rec = vec![
                s.model.clone(),
                (c.stratum + 1).to_string(),
                (c.age + 1).to_string(),
                (c.period + 1).to_string(),
                c.exposure.to_string(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.rate_mean.to_string(),
                c.rate_var.to_string(),
            ];
            rec.extend(c.count_quantiles.iter().map(|q| q.to_string()));
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a prediction CSV back into one summary per model, in order of
/// first appearance.
pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<PredictiveSummary>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    const FIXED: usize = 9;
    if header.len() < FIXED || header.get(0) != Some("model") {
        return Err(parse_row_error(1, "not a prediction CSV"));
    }
    let probs = header
        .iter()
        .skip(FIXED)
        .map(|h| {
            h.strip_prefix('q')
                .and_then(|p| p.parse::<f64>().ok())
                .ok_or_else(|| parse_row_error(1, format!("bad quantile column {h:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut out: Vec<PredictiveSummary> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_row_error(row, e.to_string()))?;
        let num = |idx: usize| -> Result<f64> {
            rec.get(idx)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| parse_row_error(row, format!("column {} is not numeric", header.get(idx).unwrap_or("?"))))
        };
        let index = |idx: usize| -> Result<usize> {
            rec.get(idx)
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|v| *v >= 1)
                .map(|v| v - 1)
                .ok_or_else(|| parse_row_error(row, "indices are one-based integers"))
        };
        let model = rec.get(0).unwrap_or("").to_string();
        let cell = crate::forecast::CellPrediction {
            stratum: index(1)?,
            age: index(2)?,
            period: index(3)?,
            exposure: num(4)?,
            mean: num(5)?,
            sd: num(6)?,
            rate_mean: num(7)?,
            rate_var: num(8)?,
            count_quantiles: (0..probs.len()).map(|q| num(FIXED + q)).collect::<Result<_>>()?,
        };
        match out.iter_mut().find(|s| s.model == model) {
            Some(s) => s.cells.push(cell),
            None => out.push(PredictiveSummary {
                model,
                probabilities: probs.clone(),
                cells: vec![cell],
            }),
        }
    }
    Ok(out)
}
