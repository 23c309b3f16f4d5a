use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use mapc_core::forecast::{
    predictive_summary, relative_risks, run_cross_prediction, score_summary, CrossPredictionPlan,
    ModelVariant, PredictiveSummary, ScenarioResult,
};
use mapc_core::io::{
    atomic_write, ingest_registry_csv, read_predictions_csv, read_registry_csv, write_header,
    write_predictions_csv, write_registry_csv, write_sample_archive,
};
use mapc_core::leecarter::{
    extrapolate_kappa, fit_lee_carter, lee_carter_predictive, Direction, LeeCarterCell, LeeCarterFit,
};
use mapc_core::model::{RegistryTable, Sharing};
use mapc_core::sampler::{
    effective_sample_size, run_chain, split_potential_scale_reduction, PosteriorSamples,
};
use mapc_core::scoring::ScoreReport;
use mapc_core::synth::generate;
use mapc_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{MaskBlock, RunConfig};

/// Effective config plus its provenance header.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        Ok(Self { cfg, hash })
    }

    fn provenance(&self) -> Vec<(&'static str, String)> {
        vec![("config_hash", self.hash.clone()), ("seed", self.cfg.seed.to_string())]
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.cfg.output)?;
        Ok(self.cfg.output.join(name))
    }

    /// Writes a CSV body produced by `body` behind the provenance header.
    fn write_csv<F: FnOnce(&mut Vec<u8>) -> Result<()>>(&self, name: &str, body: F) -> Result<PathBuf> {
        let path = self.out(name)?;
        let mut buf = Vec::new();
        write_header(&mut buf, &self.provenance())?;
        body(&mut buf)?;
        atomic_write(&path, &buf)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_hash: &'a str,
            seed: u64,
            data: &'a T,
        }
        let path = self.out(name)?;
        let text = serde_json::to_string_pretty(&Wrapped {
            config_hash: &self.hash,
            seed: self.cfg.seed,
            data: value,
        })
        .map_err(|e| Error::Io(e.to_string()))?;
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }

    fn load_table(&self) -> Result<RegistryTable> {
        let input = &self.cfg.input;
        let path = input
            .table
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("no input table configured (input.table or --input)".into()))?;
        let pop = input.yearly_population.as_deref().map(|p| (p, input.bin_width));
        let (table, report) = ingest_registry_csv(path, input.width_ratio, pop)?;
        log::info!(
            "ingested {} cells: I={} J={} R={} missing={}",
            report.cells,
            report.ages,
            report.periods,
            report.strata,
            report.missing
        );
        Ok(table)
    }

    fn masks(&self, table: &RegistryTable) -> Result<Vec<MaskBlock>> {
        let d = table.dims();
        let masks = self
            .cfg
            .forecast
            .mask
            .iter()
            .map(|m| m.parse::<MaskBlock>())
            .collect::<Result<Vec<_>>>()?;
        for m in &masks {
            if m.stratum > d.strata || m.last > d.periods {
                return Err(Error::OutOfRange(format!(
                    "mask {}:{}-{} outside {} strata x {} periods",
                    m.stratum, m.first, m.last, d.strata, d.periods
                )));
            }
        }
        Ok(masks)
    }
}

fn mask_cells(table: &RegistryTable, masks: &[MaskBlock]) -> Vec<usize> {
    let d = table.dims();
    let mut cells = BTreeSet::new();
    for m in masks {
        for i in 0..d.ages {
            for j in m.first - 1..m.last {
                cells.insert(d.cell(i, j, m.stratum - 1));
            }
        }
    }
    cells.into_iter().collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn synth(ctx: &Context) -> Result<Vec<PathBuf>> {
    let data = generate(&ctx.cfg.synth)?;
    let table = ctx.write_csv("table.csv", |buf| write_registry_csv(&data.table, buf))?;
    let truth = ctx.write_json("truth.json", &data.truth)?;
    Ok(vec![table, truth])
}

pub fn ingest(ctx: &Context) -> Result<Vec<PathBuf>> {
    let input = &ctx.cfg.input;
    let path = input
        .table
        .as_deref()
        .ok_or_else(|| Error::InvalidParameter("no input table configured".into()))?;
    let pop = input.yearly_population.as_deref().map(|p| (p, input.bin_width));
    let (table, report) = ingest_registry_csv(path, input.width_ratio, pop)?;
    let t = ctx.write_csv("table.csv", |buf| write_registry_csv(&table, buf))?;
    let r = ctx.write_json("ingest_report.json", &report)?;
    Ok(vec![t, r])
}

fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[h.ceil() as usize] - sorted[lo])
}

/// Scalar parameters reported by `fit`: name and extractor.
fn scalar_parameters(samples: &PosteriorSamples) -> Vec<(String, Box<dyn Fn(&mapc_core::model::ApcState) -> f64>)> {
    use mapc_core::model::{Component, Family};
    let d = samples.dims;
    let mut out: Vec<(String, Box<dyn Fn(&mapc_core::model::ApcState) -> f64>)> = Vec::new();
    if !samples.spec.drop_intercept {
        for r in 0..d.strata {
            out.push((format!("intercept[{}]", r + 1), Box::new(move |s| s.intercepts[r])));
        }
    }
    for f in Family::ALL {
        let strata = if samples.spec.family(f).sharing == Sharing::Shared { 1 } else { d.strata };
        for r in 0..strata {
            for t in 0..d.len_of(f) {
                let name = if strata == 1 {
                    format!("{}[{}]", f.name(), t + 1)
                } else {
                    format!("{}[{},{}]", f.name(), t + 1, r + 1)
                };
                out.push((name, Box::new(move |s| s.effects(f).get(t, r))));
            }
        }
    }
    for c in Component::ALL {
        let fs = samples.spec.component(c);
        let idx = c.index();
        if matches!(fs.precision, mapc_core::model::PrecisionPrior::Gamma { .. }) {
            out.push((format!("kappa_{}", c.name()), Box::new(move |s| s.hyper.precision[idx])));
        }
        if fs.updates_correlation(d.strata) {
            let strata = d.strata;
            out.push((
                format!("rho_{}", c.name()),
                Box::new(move |s| mapc_core::model::fisher_z_to_rho(s.hyper.rho_star[idx], strata).map_or(f64::NAN, |c| c.rho())),
            ));
        }
    }
    out
}

fn write_posterior_summary(ctx: &Context, samples: &PosteriorSamples) -> Result<PathBuf> {
    ctx.write_csv("posterior_summary.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["parameter", "median", "q0.025", "q0.975", "ess", "psrf"]).map_err(csv_err)?;
        for (name, f) in scalar_parameters(samples) {
            let traces = samples.traces(&f);
            let mut all: Vec<f64> = traces.iter().flatten().copied().collect();
            all.sort_by(f64::total_cmp);
            w.write_record([
                name,
                sorted_quantile(&all, 0.5).to_string(),
                sorted_quantile(&all, 0.025).to_string(),
                sorted_quantile(&all, 0.975).to_string(),
                effective_sample_size(&traces).to_string(),
                split_potential_scale_reduction(&traces).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn write_relative_risks(ctx: &Context, samples: &PosteriorSamples) -> Result<Option<PathBuf>> {
    if !samples.spec.has_shared_family() {
        log::info!("no shared family; stratum relative risks are not identified and are skipped");
        return Ok(None);
    }
    let r0 = ctx.cfg.forecast.reference_stratum;
    if r0 == 0 {
        return Err(Error::OutOfRange("reference stratum is one-based".into()));
    }
    let bands = relative_risks(samples, r0 - 1, ctx.cfg.forecast.relative_risk)?;
    let path = ctx.write_csv("relative_risks.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["family", "stratum", "position", "median", "q0.025", "q0.975"]).map_err(csv_err)?;
        for b in &bands {
            w.write_record([
                b.family.name().to_string(),
                (b.stratum + 1).to_string(),
                (b.position + 1).to_string(),
                b.median.to_string(),
                b.lower.to_string(),
                b.upper.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Some(path))
}

#[derive(Serialize)]
struct FitDiagnostics {
    draws: usize,
    eta_acceptance: f64,
    correlation_acceptance: Vec<(String, f64)>,
    clamp_events: u64,
    parameters: Vec<mapc_core::sampler::ParameterDiagnostic>,
}

fn fit_and_report(ctx: &Context, table: &RegistryTable) -> Result<(PosteriorSamples, Vec<PathBuf>)> {
    let samples = run_chain(table, &ctx.cfg.model, &ctx.cfg.sampler)?;
    let mut paths = vec![write_posterior_summary(ctx, &samples)?];
    let (bin, idx) = (ctx.out("samples.bin")?, ctx.out("samples.json")?);
    write_sample_archive(&samples, &bin, &idx, &ctx.provenance())?;
    paths.push(bin);
    paths.push(idx);
    let diag = FitDiagnostics {
        draws: samples.draw_count(),
        eta_acceptance: samples.eta_acceptance(),
        correlation_acceptance: mapc_core::model::Component::ALL
            .iter()
            .filter(|c| ctx.cfg.model.component(**c).updates_correlation(table.dims().strata))
            .map(|c| (c.name().to_string(), samples.correlation_acceptance(*c)))
            .collect(),
        clamp_events: samples.chains.iter().map(|c| c.stats.clamp_events).sum(),
        parameters: samples.diagnostics.clone(),
    };
    for p in &diag.parameters {
        if p.psrf.is_finite() && p.psrf >= 1.05 {
            log::warn!("{} has PSRF {:.3}; consider more iterations", p.name, p.psrf);
        }
    }
    paths.push(ctx.write_json("diagnostics.json", &diag)?);
    paths.extend(write_relative_risks(ctx, &samples)?);
    Ok((samples, paths))
}

pub fn fit(ctx: &Context) -> Result<Vec<PathBuf>> {
    let table = ctx.load_table()?;
    let masked = table.masked(mask_cells(&table, &ctx.masks(&table)?));
    Ok(fit_and_report(ctx, &masked)?.1)
}

pub fn forecast(ctx: &Context) -> Result<Vec<PathBuf>> {
    let table = ctx.load_table()?;
    let masked = table.masked(mask_cells(&table, &ctx.masks(&table)?));
    let targets: Vec<usize> = (0..masked.dims().cells()).filter(|c| !masked.is_observed(*c)).collect();
    if targets.is_empty() {
        return Err(Error::Empty("nothing to forecast: no masked or missing cells".into()));
    }
    let (samples, mut paths) = fit_and_report(ctx, &masked)?;
    let summary = predictive_summary(&samples, &table, &targets, &ctx.cfg.forecast.levels, "apc")?;
    paths.push(ctx.write_csv("predictions.csv", |buf| write_predictions_csv(&[&summary], buf))?);
    Ok(paths)
}

/// Fits Lee-Carter per stratum on its observed periods and projects the
/// held-out ones, which must form a leading or trailing block.
pub fn leecarter(ctx: &Context) -> Result<Vec<PathBuf>> {
    let table = ctx.load_table()?;
    let masked = table.masked(mask_cells(&table, &ctx.masks(&table)?));
    let d = table.dims();
    let opts = ctx.cfg.lee_carter;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mut fits: Vec<(usize, LeeCarterFit)> = Vec::new();
    let mut summaries: Vec<PredictiveSummary> = Vec::new();
    for r in 0..d.strata {
        let held: Vec<usize> = (0..d.periods)
            .filter(|&j| (0..d.ages).any(|i| !masked.is_observed(d.cell(i, j, r))))
            .collect();
        let fitted: Vec<usize> = (0..d.periods).filter(|j| !held.contains(j)).collect();
        let (first, last) = (fitted.first().copied(), fitted.last().copied());
        let (Some(first), Some(last)) = (first, last) else {
            return Err(Error::InsufficientData(format!("stratum {} has no fully observed period", r + 1)));
        };
        if last + 1 - first != fitted.len() {
            return Err(Error::InvalidParameter(format!(
                "stratum {}: held-out periods must be a leading or trailing block",
                r + 1
            )));
        }
        let mut deaths = Vec::new();
        let mut exposure = Vec::new();
        for i in 0..d.ages {
            for &j in &fitted {
                let c = d.cell(i, j, r);
                deaths.push(masked.deaths()[c].expect("fitted periods are observed") as f64);
                exposure.push(table.exposure()[c]);
            }
        }
        let fit = fit_lee_carter(&deaths, &exposure, d.ages, fitted.len(), &opts)?;
        if !held.is_empty() {
            let before = first;
            let after = d.periods - 1 - last;
            let back = if before > 0 { extrapolate_kappa(&fit, before, Direction::Backward, &opts)? } else { vec![] };
            let fwd = if after > 0 { extrapolate_kappa(&fit, after, Direction::Forward, &opts)? } else { vec![] };
            let mut cells = Vec::new();
            for i in 0..d.ages {
                for &j in &held {
                    let kappa = if j < first { back[first - j - 1] } else { fwd[j - last - 1] };
                    cells.push(LeeCarterCell {
                        age: i,
                        period: j,
                        stratum: r,
                        exposure: table.exposure()[d.cell(i, j, r)],
                        kappa,
                    });
                }
            }
            let s = lee_carter_predictive(&fit, &cells, &ctx.cfg.forecast.levels, ctx.cfg.crosspred.lee_carter_draws, &mut rng)?;
            summaries.push(s);
        }
        fits.push((r + 1, fit));
    }
    let mut paths = vec![ctx.write_json("lee_carter_fit.json", &fits)?];
    if !summaries.is_empty() {
        let mut merged = summaries.remove(0);
        for s in summaries {
            merged.cells.extend(s.cells);
        }
        paths.push(ctx.write_csv("predictions.csv", |buf| write_predictions_csv(&[&merged], buf))?);
    }
    Ok(paths)
}

fn write_score_tables(ctx: &Context, prefix: &str, sections: &[(String, &ScoreReport)]) -> Result<Vec<PathBuf>> {
    let report = ctx.write_csv(&format!("{prefix}report.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["scenario", "model", "measure", "value"]).map_err(csv_err)?;
        for (scenario, rep) in sections {
            let mut rows = vec![("mean_dss".to_string(), rep.mean_dss), ("mse".to_string(), rep.mse)];
            rows.extend(rep.coverage.iter().map(|(l, c)| (format!("coverage{l}"), *c)));
            for (measure, value) in rows {
                w.write_record([scenario.as_str(), rep.model.as_str(), &measure, &value.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    let curve = ctx.write_csv(&format!("{prefix}cumulative_dss.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["scenario", "model", "horizon", "period_index", "period_mean_dss", "cumulative_dss"])
            .map_err(csv_err)?;
        for (scenario, rep) in sections {
            for (h, ((p, m), c)) in rep
                .period_order
                .iter()
                .zip(&rep.period_mean_dss)
                .zip(&rep.cumulative_dss)
                .enumerate()
            {
                w.write_record([
                    scenario.clone(),
                    rep.model.clone(),
                    (h + 1).to_string(),
                    (p + 1).to_string(),
                    m.to_string(),
                    c.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(vec![report, curve])
}

pub fn crosspred(ctx: &Context) -> Result<Vec<PathBuf>> {
    let table = ctx.load_table()?;
    let mut plan = CrossPredictionPlan::full(table.dims().strata, ctx.cfg.forecast.levels.clone());
    plan.lee_carter_draws = ctx.cfg.crosspred.lee_carter_draws;
    let mut models = ModelVariant::standard_set();
    for m in &mut models {
        if let ModelVariant::LeeCarter { options, .. } = m {
            *options = ctx.cfg.lee_carter;
        }
    }
    let results: Vec<ScenarioResult> = run_cross_prediction(&table, &models, &ctx.cfg.sampler, &plan)?;
    let sections: Vec<(String, &ScoreReport)> = results.iter().map(|r| (r.scenario.label(), &r.report)).collect();
    let mut paths = write_score_tables(ctx, "crosspred_", &sections)?;
    let summaries: Vec<&PredictiveSummary> = results.iter().map(|r| &r.summary).collect();
    paths.push(ctx.write_csv("crosspred_predictions.csv", |buf| write_predictions_csv(&summaries, buf))?);
    Ok(paths)
}

/// Scores a prediction CSV against a truth table.
pub fn score(ctx: &Context, predictions: &Path, truth: &Path) -> Result<Vec<PathBuf>> {
    let summaries = read_predictions_csv(fs::File::open(predictions)?)?;
    let (truth, _) = read_registry_csv(fs::File::open(truth)?, ctx.cfg.input.width_ratio, None)?;
    let levels = &ctx.cfg.forecast.levels;
    let mut reports = Vec::new();
    for s in &summaries {
        let mut order: Vec<usize> = s.cells.iter().map(|c| c.period).collect();
        order.sort_unstable();
        order.dedup();
        reports.push(score_summary(s, &truth, levels, &order)?);
    }
    let sections: Vec<(String, &ScoreReport)> = reports.iter().map(|r| ("all".to_string(), r)).collect();
    let mut paths = write_score_tables(ctx, "score_", &sections)?;
    paths.push(ctx.write_json("score.json", &reports)?);
    Ok(paths)
}
