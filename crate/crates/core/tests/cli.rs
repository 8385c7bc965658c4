use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
experiment = "pendulum"
delta_ts = [0.1]

[sampler.mode]
kind = "grid"
counts = [16, 16]

[greedy]
max_centers = 30

[selection]
families = ["gaussian"]
epsilons = [0.5, 1.0]
m_star = 20

[test.initial_conditions]
kind = "rest_positions"
count = 2
bounds = [{ lower = 0.0, upper = 2.0 }]
"#;

fn symker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symker")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_succeed() {
    assert!(symker(&["--help"]).status.success());
    assert!(symker(&["--version"]).status.success());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"pendulum\"\n[greedy]\nmax_center = 3\n");
    let out = symker(&["--config", s(&cfg), "train", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_center"));

    let cfg = write_config(dir.path(), "experiment = \"wave\"\n");
    let out = symker(&["--config", s(&cfg), "train", "--experiment", "chain"]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nope.toml");
    assert_eq!(symker(&["--config", s(&missing), "check-bounds", "--experiment", "pendulum"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("model.json");
    let out = symker(&["predict", "--model", s(&missing), "--state", "1,0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = symker(&["diagnose-separability", "--experiment", "chain", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_predict_and_check_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("train");
    let out = symker(&["--config", s(&cfg), "--out", s(&out_dir), "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model_dt0.1.json", "greedy_trace_dt0.1.csv", "selection_table_dt0.1.csv", "dataset_dt0.1.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let table = std::fs::read_to_string(out_dir.join("selection_table_dt0.1.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(table.lines().filter(|l| l.ends_with(",1")).count(), 1);

    let model = out_dir.join("model_dt0.1.json");
    let out = symker(&["predict", "--model", s(&model), "--state", "1.0,0.0", "--steps", "3"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[0].starts_with("t,q_1,p_1"));
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("0,1,0"));
    // the pendulum starts falling back towards q = 0
    let q3: f64 = rows[4].split(',').nth(1).unwrap().parse().unwrap();
    assert!(q3 < 1.0 && q3 > 0.5, "{q3}");

    let out = symker(&["predict", "--model", s(&model), "--state", "1.0"]);
    assert_eq!(out.status.code(), Some(1));

    let out = symker(&["--config", s(&cfg), "check-bounds", "--model", s(&model)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["experiment"], "pendulum");
    assert!(report["contraction_margin"].as_f64().unwrap() > 0.0);
    assert!(report["step_size_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn check_bounds_reports_the_pendulum_bound() {
    let out = symker(&["check-bounds", "--experiment", "pendulum"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = report["step_size_bound"].as_f64().unwrap();
    assert_eq!(format!("{b:.2e}"), "7.07e-2");
    assert!(report["contraction_margin"].is_null());
    assert_eq!(report["resonance"].as_array().unwrap().len(), 0);
}

#[test]
fn diagnose_separability_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = symker(&["--config", s(&cfg), "--out", s(dir.path()), "diagnose-separability"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("separability_a.csv").exists());
    assert!(dir.path().join("separability_b.csv").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mixed view"));
}

#[test]
fn experiment_subcommand_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("exp");
    let out = symker(&["--config", s(&cfg), "--out", s(&out_dir), "--seed", "7", "experiment", "pendulum"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("MANIFEST").exists());
    assert!(out_dir.join("rel_error.csv").exists());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            symker::experiment::load_config(Some(&path), None, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 4);
}
