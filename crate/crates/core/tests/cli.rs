use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hhmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hhmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, sampler: &str, out: &Path) -> std::path::PathBuf {
    let path = dir.join("run.json");
    let doc = serde_json::json!({
        "target": "neal",
        "sampler": sampler,
        "epsilon": 0.2,
        "steps": 10,
        "iterations": 1000,
        "seed": 1,
        "out": out,
    });
    fs::write(&path, doc.to_string()).unwrap();
    path
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let cfg = write_config(dir.path(), "hhmc", &out);
    let res = hhmc(&["run", cfg.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let csv = fs::read_to_string(out.join("samples.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    let expected: Vec<String> = ["iter", "accepted", "log_density"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..30).map(|j| format!("theta_{j}")))
        .collect();
    assert_eq!(header, expected.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1000);
    assert!(rows.iter().all(|r| r.split(',').count() == 33));
    assert!(rows[0].starts_with("0,"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["sampler"], "hhmc");
    assert_eq!(summary["config"]["seed"], 1);
    assert_eq!(summary["summary"]["coordinates"].as_array().unwrap().len(), 30);
    for key in ["acceptance_rate", "clamp_events", "divergences", "wall_seconds"] {
        assert!(summary["summary"].get(key).is_some(), "{key}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["x", "y"] {
        let out = dir.path().join(name);
        let res = hhmc(&[
            "run", "--target", "neal", "--sampler", "hmc", "--epsilon", "0.2", "--steps", "10",
            "--iterations", "200", "--seed", "9", "--out", out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        files.push(fs::read(out.join("samples.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write_config(dir.path(), "hhmc", &out);
    let res = hhmc(&["run", "--config", cfg.to_str().unwrap(), "--iterations", "20", "--burn-in", "5"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write_config(dir.path(), "nuts", &out);
    let res = hhmc(&["run", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown sampler"));

    let cfg = write_config(dir.path(), "hmc", &out);
    let res = hhmc(&["run", cfg.to_str().unwrap(), "--epsilon", "-0.1"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("epsilon must be positive"));

    let res = hhmc(&["run", "--target", "neal", "--sampler", "hmc", "--epsilon", "0.2"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = blocker.join("sub");
    let cfg = write_config(dir.path(), "hmc", &out);
    let res = hhmc(&["run", cfg.to_str().unwrap(), "--iterations", "10"]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn benchmark_writes_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let res = hhmc(&["benchmark-neal", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for file in ["hmc_samples.csv", "hhmc_samples.csv"] {
        assert_eq!(fs::read_to_string(out.join(file)).unwrap().lines().count(), 1001);
    }
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["true_std"].as_array().unwrap().len(), 30);
    assert_eq!(cmp["true_std"][0], 110.0);
    let hhmc = &cmp["samplers"]["hhmc"];
    let hmc = &cmp["samplers"]["hmc"];
    assert_eq!(hhmc["coordinates"].as_array().unwrap().len(), 30);
    assert!(hhmc["acceptance_rate"].as_f64().unwrap() >= 0.9);
    let c0 = &hmc["coordinates"][0];
    assert!(c0["std_ratio"].as_f64().unwrap() < 0.6 || c0["lag1"].as_f64().unwrap() > 0.95);
    assert!(c0["ess"].as_f64().is_some());
}

#[test]
fn check_command() {
    let res = hhmc(&["check", "neal"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    assert!(String::from_utf8_lossy(&res.stdout).contains("PASS"));

    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, r#"{"mean":[1,-1],"cov":[[4,1.9],[1.9,1]]}"#).unwrap();
    assert!(hhmc(&["check", good.to_str().unwrap()]).status.success());

    let corrupt = dir.path().join("corrupt.json");
    fs::write(&corrupt, r#"{"mean":[0,0],"cov_diag":[1,"#).unwrap();
    assert_eq!(hhmc(&["check", corrupt.to_str().unwrap()]).status.code(), Some(2));

    let not_spd = dir.path().join("not_spd.json");
    fs::write(&not_spd, r#"{"mean":[0,0],"cov":[[1,3],[3,1]]}"#).unwrap();
    let res = hhmc(&["check", not_spd.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("validation error"));
}
