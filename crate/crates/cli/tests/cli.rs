use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[synth]
ages = 4
periods = 6
strata = 2
intercepts = [-5.5, -5.8]

[sampler]
iterations = 1200
burn_in = 200
thinning = 5
chains = 2

[crosspred]
lee_carter_draws = 500
"#;

fn mapc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mapc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mapc(dir, args);
    assert!(
        out.status.success(),
        "mapc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(dir.path(), &["--config", "run.toml", "--out", "data", "synth"]);
    dir
}

fn data_rows(path: &Path) -> Vec<csv::StringRecord> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    rdr.records().map(|r| r.unwrap()).collect()
}

fn headers(path: &Path) -> csv::StringRecord {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    rdr.headers().unwrap().clone()
}

#[test]
fn forecast_writes_monotone_quantiles_and_provenance() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &["--config", "run.toml", "--input", "data/table.csv", "--out", "fc", "--mask", "2:4-6", "forecast"],
    );
    let pred = d.join("fc/predictions.csv");
    let text = std::fs::read_to_string(&pred).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# config_hash=")));
    assert!(text.lines().any(|l| l == "# seed=5"));
    let head = headers(&pred);
    let qcols: Vec<usize> = head
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('q'))
        .map(|(i, _)| i)
        .collect();
    assert!(qcols.len() >= 3);
    let rows = data_rows(&pred);
    assert_eq!(rows.len(), 4 * 3);
    for row in rows {
        let q: Vec<f64> = qcols.iter().map(|&i| row[i].parse().unwrap()).collect();
        assert!(q.windows(2).all(|w| w[0] <= w[1]), "{q:?}");
    }
    for f in ["samples.bin", "samples.json", "posterior_summary.csv", "diagnostics.json"] {
        assert!(d.join("fc").join(f).exists(), "{f} missing");
    }
}

#[test]
fn crosspred_reports_every_scenario_and_model() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "run.toml", "--input", "data/table.csv", "--out", "cp", "crosspred"]);
    let rows = data_rows(&d.join("cp/crosspred_report.csv"));
    let mut scenarios: Vec<String> = rows.iter().map(|r| r[0].to_string()).collect();
    scenarios.sort();
    scenarios.dedup();
    assert_eq!(scenarios.len(), 2 * 2);
    let mut models: Vec<String> = rows.iter().map(|r| r[1].to_string()).collect();
    models.sort();
    models.dedup();
    assert_eq!(models, ["apc", "cmapc", "lee-carter"]);
}

#[test]
fn runs_are_bitwise_reproducible() {
    let dir = setup();
    let d = dir.path();
    let args = ["--config", "run.toml", "--input", "data/table.csv", "--out", "a", "--mask", "1:5-6", "forecast"];
    let files = ["samples.bin", "samples.json", "predictions.csv", "posterior_summary.csv"];
    ok(d, &args);
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(d.join("a").join(f)).unwrap()).collect();
    ok(d, &args);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&std::fs::read(d.join("a").join(f)).unwrap(), bytes, "{f} differs");
    }
}

#[test]
fn ingest_round_trip_preserves_the_table() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "run.toml", "--input", "data/table.csv", "--out", "ing", "ingest"]);
    ok(d, &["--config", "run.toml", "--input", "ing/table.csv", "--out", "ing2", "ingest"]);
    assert_eq!(data_rows(&d.join("data/table.csv")), data_rows(&d.join("ing2/table.csv")));
}

#[test]
fn leecarter_and_score_chain_together() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "run.toml", "--input", "data/table.csv", "--out", "lc", "--mask", "1:5-6", "leecarter"]);
    ok(
        d,
        &[
            "--config",
            "run.toml",
            "--out",
            "sc",
            "score",
            "--predictions",
            "lc/predictions.csv",
            "--truth",
            "data/table.csv",
        ],
    );
    let rows = data_rows(&d.join("sc/score_report.csv"));
    assert!(rows.iter().any(|r| r.iter().any(|f| f == "mean_dss")));
}

#[test]
fn failures_emit_a_machine_readable_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = mapc(dir.path(), &["--input", "missing.csv", "fit"]);
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let record: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert!(record["error"].is_string());
    assert!(record["message"].as_str().unwrap().contains("missing.csv"));

    std::fs::write(dir.path().join("bad.csv"), "stratum,age_index,period_index,deaths,person_years\n1,1,1,oops,10\n").unwrap();
    let out = mapc(dir.path(), &["--input", "bad.csv", "ingest"]);
    assert!(!out.status.success());
    let record: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(record["error"], "parse");
}
