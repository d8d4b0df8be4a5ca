use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn diffreg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffreg")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SIM: &str = r#"{
  "seed": 11,
  "simulation": {
    "base": { "n": 30, "p": 4, "reps": 1, "n_quad": 41, "snr": 3, "omega": 0.5 },
    "emit_dataset": true
  }
}"#;

/// Simulates one small data set and returns its directory.
fn small_dataset(dir: &Path) -> PathBuf {
    write(dir, "sim.json", SMALL_SIM);
    let o = diffreg(&["simulate", "--config", "sim.json", "--out", "sim"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("sim/dataset_default")
}

fn data_config(dir: &Path, data: &Path) -> PathBuf {
    let doc = serde_json::json!({
        "data": data,
        "basis": { "p": 4, "n_quad": 41 },
        "test": { "b": 120 }
    });
    write(dir, "data.json", &doc.to_string())
}

#[test]
fn zero_snr_is_a_config_error_naming_the_field() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", r#"{"simulation": {"base": {"snr": 0}}}"#);
    let o = diffreg(&["simulate", "--config", "c.json"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("snr"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", r#"{"simulation": {"base": {"n": 10, "reps_typo": 2}}}"#);
    let o = diffreg(&["simulate", "--config", "c.json"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reps_typo"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let o = diffreg(&["fit", "--config", "absent.json"], t.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_directory_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "c.json", r#"{"data": "nowhere"}"#);
    let o = diffreg(&["fit", "--config", "c.json"], t.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn malformed_data_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path());
    fs::write(data.join("F.csv"), "c1,c2,c3,c4\n1,2,x,4\n").unwrap();
    data_config(t.path(), &data);
    let o = diffreg(&["sweep", "--config", "data.json"], t.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn single_replication_outputs_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "sim.json", SMALL_SIM);
    for out in ["a", "b"] {
        let o = diffreg(&["simulate", "--config", "sim.json", "--out", out, "--seed", "5"], t.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let files = ["summary.json", "summary.csv", "records_default.csv", "dataset_default/U.csv", "dataset_default/F.csv"];
    for f in files {
        let a = fs::read(t.path().join("a").join(f)).unwrap();
        let b = fs::read(t.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn outputs_carry_the_merged_config() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path());
    let summary = json(&t.path().join("sim/summary.json"));
    let cfg = &summary["provenance"]["config"];
    assert_eq!(cfg["simulation"]["base"]["n"], 30);
    // Defaults that were not in the document are present after merging.
    assert!(cfg["kernel"]["h"].is_number());
    let csv = fs::read_to_string(t.path().join("sim/summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# provenance: {"));
    assert_eq!(lines.next().unwrap(), "scenario,metric,lambda,mean,se,display");
}

#[test]
fn test_command_reports_a_p_value_and_all_replicates() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path());
    data_config(t.path(), &data);
    let o = diffreg(&["test", "--config", "data.json", "--out", "gof"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&t.path().join("gof/test.json"));
    let p = r["result"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(r["result"]["bootstrap_values"].as_array().unwrap().len(), 120);
    let boot = fs::read_to_string(t.path().join("gof/bootstrap.csv")).unwrap();
    assert_eq!(boot.lines().count(), 2 + 120);
}

#[test]
fn sweep_lists_every_grid_value() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path());
    data_config(t.path(), &data);
    let o = diffreg(&["sweep", "--config", "data.json", "--out", "sw"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&t.path().join("sw/sweep.json"));
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    let best = r["best_lambda"].as_f64().unwrap();
    let min_row = rows.iter().min_by(|a, b| a["gcv"].as_f64().unwrap().total_cmp(&b["gcv"].as_f64().unwrap())).unwrap();
    assert_eq!(min_row["lambda"].as_f64().unwrap(), best);
}

#[test]
fn fit_uses_the_configured_lambda() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path());
    let doc = serde_json::json!({ "data": data, "lambda": 250.0 });
    write(t.path(), "fit.json", &doc.to_string());
    let o = diffreg(&["fit", "--config", "fit.json", "--out", "f"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&t.path().join("f/fit.json"));
    assert_eq!(r["lambda"], 250.0);
    assert_eq!(r["lambda_source"], "config");
    assert_eq!(r["fit"]["c_hat"].as_array().unwrap().len(), 16);
    let fitted = fs::read_to_string(t.path().join("f/fitted.csv")).unwrap();
    assert_eq!(fitted.lines().count(), 2 + 30);
}

#[test]
fn spectrum_is_nonincreasing() {
    let t = tempfile::tempdir().unwrap();
    let data = small_dataset(t.path());
    data_config(t.path(), &data);
    let o = diffreg(&["spectrum", "--config", "data.json", "--out", "sp"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&t.path().join("sp/spectrum.json"));
    let g: Vec<f64> = r["gamma"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(g.len(), 16);
    assert!(g.windows(2).all(|w| w[0] >= w[1]));
    assert!(g.iter().all(|&v| v >= 0.0));
}

fn trajectories(subjects: usize) -> String {
    let mut out = String::from("id,p,T_real,T_pot\n");
    for s in 0..subjects {
        for i in 0..40 {
            let lp = 6.295 + 0.61 * i as f64 / 39.0;
            let p = lp.exp();
            let t = 280.0 + 0.3 * s as f64 - 0.05 * (p - 600.0) + 2.0 * (s as f64 + 3.0 * lp).sin();
            out.push_str(&format!("s{s},{p},{},{t}\n", t * (p / 1000.0f64).powf(0.286)));
        }
    }
    out
}

#[test]
fn ingest_then_fit_on_the_trajectory_preset() {
    let t = tempfile::tempdir().unwrap();
    let mut csv = trajectories(12);
    // One subject that misses the coverage gate.
    for i in 0..10 {
        csv.push_str(&format!("short,{},250,270\n", 500.0 + i as f64));
    }
    write(t.path(), "traj.csv", &csv);
    write(t.path(), "ing.json", r#"{"preset": "era5", "ingest": {"input": "traj.csv"}}"#);
    let o = diffreg(&["ingest", "--config", "ing.json", "--out", "ing"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = json(&t.path().join("ing/ingest_report.json"));
    assert_eq!(rep["report"]["subjects_in"], 13);
    assert_eq!(rep["report"]["subjects_out"], 12);
    assert_eq!(rep["report"]["skipped"][0]["id"], "short");
    let meta = json(&t.path().join("ing/dataset/dataset.json"));
    assert_eq!(meta["n"], 12);
    assert_eq!(meta["p"], 10);

    write(t.path(), "fit.json", r#"{"preset": "era5", "data": "ing/dataset"}"#);
    let o = diffreg(&["sweep", "--config", "fit.json", "--out", "fit"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&t.path().join("fit/sweep.json"))["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn ingest_without_input_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let o = diffreg(&["ingest", "--config", "era5"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ingest.input"), "{}", stderr(&o));
}

#[test]
fn ingest_of_a_missing_file_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "ing.json", r#"{"preset": "era5", "ingest": {"input": "absent.csv"}}"#);
    let o = diffreg(&["ingest", "--config", "ing.json"], t.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_thread_count_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "sim.json", SMALL_SIM);
    let o = diffreg(&["simulate", "--config", "sim.json", "--threads", "0"], t.path());
    assert_eq!(o.status.code(), Some(2));
}
