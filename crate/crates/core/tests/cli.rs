use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sflpon");

/// Small, fast configuration shared by the CLI tests.
const SMALL: &str = r#"{
  "partition": {"feature_dim": 6, "test_samples": 1000},
  "n_rounds": 3
}"#;

fn sflpon(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SFLPON_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn missing_config_exits_2_naming_path() {
    let out = sflpon(&["run", "--config", "/nonexistent/cfg.json", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/cfg.json"));
}

#[test]
fn invalid_field_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"network": {"slice_rate_bps": -1}}"#);
    let out = sflpon(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slice_rate_bps"));

    let out = sflpon(&["run", "--clients", "321", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_two_files_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    for (out, seed) in [(&out_a, "5"), (&out_b, "5"), (&out_c, "6")] {
        let o = sflpon(&["run", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
    }
    let mut files: Vec<String> = std::fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["records.csv", "summary.json"]);
    for f in ["records.csv", "summary.json"] {
        assert_eq!(read(&out_a.join(f)), read(&out_b.join(f)));
        assert_ne!(read(&out_a.join(f)), read(&out_c.join(f)));
    }
    let summary: serde_json::Value = serde_json::from_slice(&read(&out_a.join("summary.json"))).unwrap();
    assert_eq!(summary["config"]["seed"], 5);
}

#[test]
fn flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let o = sflpon(&[
        "run", "--config", &cfg, "--mode", "classical", "--clients", "20", "--rounds", "2",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8(read(&out.join("records.csv"))).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with(&['1', '2'][..]) && r.contains(",classical,20,")));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("from_env");
    let o = Command::new(BIN)
        .args(["run", "--config", &cfg])
        .env("SFLPON_OUT_DIR", &out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("records.csv").exists());
}

#[test]
fn compare_writes_paired_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    let o = sflpon(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["records_classical.csv", "records_sfl.csv", "comparison.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let v: serde_json::Value = serde_json::from_slice(&read(&out.join("comparison.json"))).unwrap();
    let saving = v["summary"]["mean_saving"].as_f64().unwrap();
    assert!((saving - 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(v["savings"].as_array().unwrap().len(), 3);
}

#[test]
fn compare_with_one_client_per_onu_saves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("n16");
    let o = sflpon(&["compare", "--config", &cfg, "--clients", "16", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&read(&out.join("comparison.json"))).unwrap();
    assert_eq!(v["summary"]["mean_saving"].as_f64().unwrap(), 0.0);
}

#[test]
fn sweep_emits_one_row_per_mode_and_n() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = sflpon(&["sweep", "--config", &cfg, "--n-values", "48,128", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(read(&out.join("sweep.csv"))).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N,mode,mean_upstream_bits,mean_involved,final_accuracy");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("48,classical,1.267968e+09,"));
    assert!(lines[2].starts_with("48,sfl,422656000,"));
    assert!(lines[3].starts_with("128,classical,3.381248e+09,"));
    assert!(lines[4].starts_with("128,sfl,422656000,"));
}

#[test]
fn schema_command_prints_published_schema() {
    let o = sflpon(&["schema"]);
    assert_eq!(o.status.code(), Some(0));
    let published = include_str!("../schema/config.schema.json");
    assert_eq!(String::from_utf8(o.stdout).unwrap(), published);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(sflpon(&["frobnicate"]).status.code(), Some(2));
}
