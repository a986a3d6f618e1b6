use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MINIMAL: &str = r#"{
    "grid": {"x_min": 1e-3, "x_max": 100, "cells": 40},
    "kernel": {"family": "constant", "c": 1},
    "daughter": {"family": "uniform"},
    "prob": {"form": "constant", "value": 1},
    "initial": {"family": "exponential", "lambda": 1},
    "t_end": 4,
    "control": {"output_every": 0.5}
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn breakcoag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_breakcoag")).args(args).output().unwrap()
}

fn run(config: &Path, out: &Path, overrides: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for o in overrides {
        args.extend(["--override", o]);
    }
    breakcoag(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_run_writes_stamped_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("run: PASS"));

    let moments = fs::read_to_string(out.join("moments.csv")).unwrap();
    let first = moments.lines().next().unwrap();
    assert!(first.starts_with("# config_sha256="));
    let hash = first.trim_start_matches("# config_sha256=");
    assert_eq!(hash.len(), 64);
    let header = moments.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "t,M_-2a,M_-theta,M_0,M_1,M_2");
    // t = 0 plus eight outputs
    assert_eq!(moments.lines().filter(|l| !l.starts_with('#')).count(), 1 + 9);

    let snap = fs::read_to_string(out.join("trajectory/f_00008.csv")).unwrap();
    assert!(snap.starts_with(&format!("# config_sha256={hash}")));
    assert!(snap.contains("\nx_center,dx,f\n"));
    assert_eq!(snap.lines().filter(|l| !l.starts_with('#')).count(), 1 + 40);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("hypothesis.json")).unwrap()).unwrap();
    assert_eq!(report["config_sha256"], hash);
    assert!(report["checks"]["p1"].is_object());
}

#[test]
fn identical_configs_give_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &[]).status.code(), Some(0));
    for name in ["moments.csv", "trajectory/f_00000.csv", "trajectory/f_00005.csv", "hypothesis.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn out_of_range_probability_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = run(&cfg, &tmp.path().join("out"), &["prob.value=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prob.value"), "{}", stderr(&o));

    let o = run(&cfg, &tmp.path().join("out"), &["grid.spacing=\"log\""]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("spacing"), "{}", stderr(&o));
}

#[test]
fn contraction_outside_uniqueness_hypotheses_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = run(&cfg, &tmp.path().join("out"), &["kernel.family=product", r#"experiments=["contraction"]"#]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("unmet"), "{}", stderr(&o));
    assert!(tmp.path().join("out/failure.json").exists());
}

#[test]
fn contraction_within_hypotheses_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = run(&cfg, &tmp.path().join("out"), &["prob.value=0.5", "t_end=2", r#"experiments=["contraction"]"#]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/contraction.csv")).unwrap();
    assert!(csv.contains("t,distance,envelope"));
}

#[test]
fn gelation_onset_is_reported_and_asserted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let gel = [
        "kernel.family=product",
        "grid.x_max=1000",
        "grid.cells=120",
        "t_end=1",
        "control.output_every=0.01",
        "truncation.mode=outflow",
        r#"experiments=["run","gel"]"#,
    ];
    let o = run(&cfg, &tmp.path().join("ok"), &gel);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("ok/gel.json")).unwrap()).unwrap();
    let onset = report["onset"].as_f64().unwrap();
    assert!((0.4..0.7).contains(&onset), "{onset}");

    let mut bad = gel.to_vec();
    bad.push("gel.window=[0.1, 0.2]");
    let o = run(&cfg, &tmp.path().join("bad"), &bad);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("gel: FAIL"));
}

#[test]
fn integration_failure_exits_three_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = run(
        &cfg,
        &tmp.path().join("out"),
        &[
            "control.method=heun_adaptive",
            "control.rtol=1e-15",
            "control.atol=1e-15",
            "control.dt_min=0.1",
            "control.dt_max=0.1",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/failure.json")).unwrap()).unwrap();
    assert_eq!(diag["exit_code"], 3);
    assert_eq!(diag["stage"], "integrate");
}

#[test]
fn verify_prints_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = breakcoag(&["verify", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["alpha"], 0.0);
    assert_eq!(report["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn dlvp_experiment_reports_the_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = run(&cfg, &tmp.path().join("out"), &[r#"experiments=["dlvp"]"#, "dlvp.max_m=6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/dlvp.json")).unwrap()).unwrap();
    let j: Vec<u64> = rep["j_seq"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(&j[..4], &[1, 3, 8, 21]);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        breakcoag_cli::parse_config(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
