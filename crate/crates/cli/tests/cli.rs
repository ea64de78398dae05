use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fair")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let f = fixtures();
    let path = dir.join("exp.json");
    let text = format!(
        r#"{{
  "dataset": "{}",
  "schema": "{}",
  "families": ["fair-scalar", "fad"],
  "grids": {{"fair-scalar": [0, 1000], "fad": [1]}},
  "seeds": [0],
  "out": "out",
  "train": {{"max_epochs": 3, "patience": 3}}{extra}
}}"#,
        f.join("synthetic_biased.csv").display(),
        f.join("synthetic_biased.schema.json").display(),
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn ingest_prints_hashes() {
    let f = fixtures();
    let o = fair(&[
        "ingest",
        "--dataset",
        f.join("german_credit.csv").to_str().unwrap(),
        "--schema",
        f.join("german_sex.schema.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("\"rows\": 1000"), "{out}");
    assert!(out.contains("content_hash"));
    assert!(out.contains("architecture row: german-sex"));
}

#[test]
fn regenerated_fixtures_match_the_bundled_ones() {
    let dir = tempfile::tempdir().unwrap();
    let o = fair(&["ingest", "--write-fixtures", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(fixtures().join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), r#", "learning_rate": 0.1"#);
    let o = fair(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field `learning_rate`"), "{}", stderr(&o));
}

#[test]
fn sweep_front_weights_plot() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let config = config.to_str().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let o = fair(&["sweep", "--config", config, "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("3 runs planned, 3 trained, 0 already complete, 0 failed"), "{}", stdout(&o));
    let o = fair(&["sweep", "--config", config]);
    assert!(stdout(&o).contains("3 runs planned, 0 trained, 3 already complete"), "{}", stdout(&o));

    let o = fair(&["front", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ASD vs AUC_y, overall front:"));

    let o = fair(&["weights", "--config", config, "--family", "fair-scalar", "--top-k", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("alpha=1000"), "{}", stdout(&o));
    assert!(Path::new(out).join("weights/fair-scalar_s0.csv").is_file());
    let o = fair(&["weights", "--out", out, "--family", "fad"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not learn instance weights"));

    let o = fair(&["plot", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = Path::new(out).join("plots/front_asd.svg");
    let first = fs::read(&svg).unwrap();
    assert!(stdout(&o).contains("alpha_curve_fair-scalar.svg"));
    fair(&["plot", "--out", out]);
    assert_eq!(fs::read(&svg).unwrap(), first);
}

#[test]
fn train_runs_one_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let o = fair(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--family",
        "fad-prob",
        "--alpha",
        "0.5",
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("fad-prob_a0.5_s3_"), "{text}");
    assert!(text.contains("\"split\": \"test\""), "{text}");

    let o = fair(&["train", "--config", config.to_str().unwrap(), "--family", "fad,fad-prob"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_prints_one_line_per_check() {
    let o = fair(&["check", "--instances", "1", "--draws", "20000"]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 6, "{text}");
    assert!(lines.iter().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")), "{text}");
    let failed = lines.iter().any(|l| l.starts_with("FAIL "));
    assert_eq!(o.status.code(), Some(if failed { 1 } else { 0 }));
    assert!(lines[0].starts_with("PASS gradient exactness"), "{text}");
}
