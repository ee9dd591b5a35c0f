use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn swarmopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmopt"))
        .args(args)
        .env_remove("SWARMOPT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &std::path::Path, name: &str, edit: impl FnOnce(&mut Value)) -> String {
    let o = swarmopt(&["preset", "heavy-ball"]);
    let mut cfg: Value = serde_json::from_str(&stdout(&o)).unwrap();
    cfg["horizon"] = 1.0.into();
    cfg.as_object_mut().unwrap().remove("name");
    edit(&mut cfg);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "hb.json", |_| {});
    let out = dir.path().join("out");
    let o = swarmopt(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["name"], "hb");
    assert!(out.join("trajectory.csv").exists());
    assert!(out.join("summary.json").exists());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["terminal"], report["terminal"]);
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "hb.json", |_| {});
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_swarmopt"))
        .args(["run", &cfg])
        .env("SWARMOPT_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let mut args = vec![
            "run",
            "--preset",
            "scenario3",
            "--algorithm",
            "event",
            "--seed",
            "7",
            "--out",
        ];
        args.push(d.to_str().unwrap());
        let o = swarmopt(&args);
        assert!(o.status.code().is_some());
    }
    for f in ["trajectory.csv", "events.csv", "constants.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn hypothesis_violation_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", |c| c["gains"]["theta"] = 20.0.into());
    let o = swarmopt(&["run", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("hypothesis violated"), "{err}");
    assert!(err.contains("theta"), "{err}");
}

#[test]
fn failed_checks_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = swarmopt(&[
        "run",
        "--preset",
        "scenario1",
        "--algorithm",
        "alternative",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn constants_prints_formula_provenance() {
    let o = swarmopt(&["constants", "--preset", "scenario3", "--algorithm", "event"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let entries = report["entries"].as_array().unwrap();
    for sym in ["eps3", "eps4", "eps9", "eps10"] {
        let e = entries
            .iter()
            .find(|e| e["symbol"] == sym)
            .unwrap_or_else(|| panic!("{sym} missing"));
        assert!(e["value"].as_f64().unwrap() > 0.0);
        assert!(!e["formula"].as_str().unwrap().is_empty());
    }
}

#[test]
fn compare_merges_columns() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", |_| {});
    let b = write_config(dir.path(), "b.json", |c| c["gains"]["gamma"] = 4.0.into());
    let o = swarmopt(&["compare", &a, &b]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,a_continuous,b_continuous");
    assert_eq!(lines.count(), 101);
}

#[test]
fn single_compare_has_two_columns() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", |_| {});
    let csv = dir.path().join("cmp.csv");
    let o = swarmopt(&["compare", &a, "--out", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.lines().all(|l| l.split(',').count() == 2));
}

#[test]
fn compare_rejects_mismatched_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", |_| {});
    let b = write_config(dir.path(), "b.json", |c| c["horizon"] = 2.0.into());
    let o = swarmopt(&["compare", &a, &b]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
}

#[test]
fn batch_runs_every_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", |_| {});
    let b = write_config(dir.path(), "b.json", |c| c["horizon"] = 0.5.into());
    let out = dir.path().join("batch");
    let o = swarmopt(&["batch", &a, &b, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(out.join("00-a").join("summary.json").exists());
    assert!(out.join("01-b").join("summary.json").exists());
}

#[test]
fn unknown_preset_is_an_error() {
    let o = swarmopt(&["preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}
