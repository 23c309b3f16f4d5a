use std::io::BufReader;

use mapc_core::forecast::predictive_summary;
use mapc_core::io::{
    ingest_registry_csv, read_header, read_predictions_csv, read_registry_csv, read_sample_archive,
    write_header, write_predictions_csv, write_registry_csv, write_sample_archive,
};
use mapc_core::sampler::{run_chain, SamplerConfig};
use mapc_core::synth::{generate, SynthConfig};

fn small() -> mapc_core::synth::SyntheticDataset {
    generate(&SynthConfig {
        ages: 4,
        periods: 5,
        strata: 2,
        width_ratio: 2,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn registry_csv_round_trip_is_lossless() {
    let data = small();
    let d = data.table.dims();
    let table = data.table.masked([d.cell(0, 1, 0), d.cell(3, 4, 1)]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let mut buf = Vec::new();
    write_header(&mut buf, &[("seed", "7".into())]).unwrap();
    write_registry_csv(&table, &mut buf).unwrap();
    std::fs::write(&path, &buf).unwrap();

    let (back, report) = ingest_registry_csv(&path, 2, None).unwrap();
    assert_eq!(back.dims(), table.dims());
    assert_eq!(back.deaths(), table.deaths());
    assert_eq!(back.exposure(), table.exposure());
    assert_eq!(report.missing, 2);
    let header = read_header(BufReader::new(&buf[..])).unwrap();
    assert_eq!(header, vec![("seed".to_string(), "7".to_string())]);

    // Second pass through the writer yields the same bytes.
    let mut again = Vec::new();
    write_registry_csv(&back, &mut again).unwrap();
    let mut first = Vec::new();
    write_registry_csv(&table, &mut first).unwrap();
    assert_eq!(again, first);
}

#[test]
fn malformed_rows_report_their_line() {
    let text = "stratum,age_index,period_index,deaths,person_years\n1,1,1,5,100\n1,1,2,x,100\n";
    match read_registry_csv(text.as_bytes(), 1, None) {
        Err(mapc_core::Error::Parse { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn sample_archive_round_trip() {
    let data = small();
    let spec = SynthConfig::default().matching_spec();
    let samples = run_chain(&data.table, &spec, &SamplerConfig::new(300, 100, 5, 2, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (bin, idx) = (dir.path().join("s.bin"), dir.path().join("s.json"));
    write_sample_archive(&samples, &bin, &idx, &[("config_hash", "abc".into())]).unwrap();
    let (index, chains) = read_sample_archive(&bin, &idx).unwrap();
    assert_eq!(index.provenance, vec![("config_hash".to_string(), "abc".to_string())]);
    assert_eq!(chains.len(), samples.chains.len());
    for (c, out) in chains.iter().zip(&samples.chains) {
        assert_eq!(c, &out.draws);
    }
}

#[test]
fn predictions_csv_round_trip() {
    let data = small();
    let d = data.table.dims();
    let spec = SynthConfig::default().matching_spec();
    let cells = vec![d.cell(1, 4, 0), d.cell(2, 4, 1)];
    let samples = run_chain(&data.table.masked(cells.clone()), &spec, &SamplerConfig::new(300, 100, 5, 1, 2)).unwrap();
    let summary = predictive_summary(&samples, &data.table, &cells, &[0.8, 0.95], "apc").unwrap();
    let mut buf = Vec::new();
    write_predictions_csv(&[&summary], &mut buf).unwrap();
    let back = read_predictions_csv(&buf[..]).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].probabilities, summary.probabilities);
    for (a, b) in back[0].cells.iter().zip(&summary.cells) {
        assert_eq!((a.age, a.period, a.stratum), (b.age, b.period, b.stratum));
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.count_quantiles, b.count_quantiles);
    }
}
