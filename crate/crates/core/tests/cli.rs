use std::path::Path;
use std::process::{Command, Output};

fn spim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.json");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn invalid_user_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"scenario": {"users": 0}}"#);
    let out = spim(&["design", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("users"));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"scenario": {"antenas": 8}}"#);
    assert_eq!(spim(&["overhead", "--config", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn bad_flag_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spim(&["sweep", "--kind", "angle"], dir.path()).status.code(), Some(2));
    assert_eq!(spim(&["design", "--workers", "0"], dir.path()).status.code(), Some(2));
}

#[test]
fn training_without_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spim(&["train", "--mode", "fl"], dir.path()).status.code(), Some(2));
}

#[test]
fn single_path_design_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": {"paths": 1}, "experiment": {"gains": [1.0]}, "dataset": {"gains": [1.0]}}"#,
    );
    let out = spim(&["design", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("design.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].ends_with("true,true"));
}

#[test]
fn desk_design_passes_power_checks() {
    let dir = tempfile::tempdir().unwrap();
    assert!(spim(&["design", "--seed", "4"], dir.path()).status.success());
    let csv = std::fs::read_to_string(dir.path().join("design.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.ends_with("true,true")));
    let manifest = std::fs::read_to_string(dir.path().join("manifest_design.json")).unwrap();
    assert!(manifest.contains("\"seed\": 4"));
}

#[test]
fn sweep_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"experiment": {"trials": 8}}"#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(spim(&["sweep", "--kind", "snr", "--config", &cfg], &a).status.success());
    assert!(spim(&["sweep", "--kind", "snr", "--config", &cfg], &b).status.success());
    let first = std::fs::read(a.join("sweep_snr.csv")).unwrap();
    assert_eq!(first, std::fs::read(b.join("sweep_snr.csv")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("x,method,mean_se,std_se,trials,seed\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn overhead_scales_linearly_in_rounds_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str, text: &str| -> Vec<u64> {
        let out = dir.path().join(name);
        let cfg = write_config(dir.path(), text);
        assert!(spim(&["overhead", "--config", &cfg], &out).status.success());
        std::fs::read_to_string(out.join("overhead.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect()
    };
    let base = read("base", r#"{"rounds": 10, "dataset": {"realizations": 20}}"#);
    let doubled = read("doubled", r#"{"rounds": 20, "dataset": {"realizations": 40}}"#);
    for (a, b) in base.iter().zip(&doubled) {
        assert_eq!(2 * a, *b);
    }
}
