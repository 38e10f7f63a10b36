use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kgorbit_cli::{parse_config, serialize_config};

const MODEL: &str = "[model]\nm = 0.5\np = 1\ndim = 1\ncutoff = 8\n";

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("{MODEL}{body}")).unwrap();
    path
}

fn kgorbit(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgorbit"))
        .arg("--config")
        .arg(cfg)
        .arg("--output")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn normalized_form_is_idempotent() {
    let inputs = [
        format!("{MODEL}[stepper]\ndt=1e-3\nmax_time=10\n[experiment]\nkind=simulate\neta=0.1\n"),
        format!(
            "{MODEL}[stepper]\ndt = 0.002 # coarse\nscheme = rk4\n[experiment]\nkind = stability\netas = 0.05, 0.02\nseeds = 3,1\nrebaseline = false\ndistance_constant = 0.15\n[output]\ndir = results/a\nformats = json\n"
        ),
        format!("{MODEL}[stepper]\ndt=1e-3\n[experiment]\nkind=floquet\netas=0.1,0.01\nlambdas=6.283185307179586,12.566370614359172\n"),
        format!("{MODEL}[stepper]\ndt=1e-3\n[experiment]\nkind=energy-check\netas=1e-1,5e-2\ndistribution=single_mode\nmodes=2\n"),
        format!("{MODEL}[stepper]\ndt=1e-3\n[experiment]\nkind=first-return\netas=0.1\nseeds=7\ndelta=0.2\namplitude_power=3.5\n"),
    ];
    for text in &inputs {
        let cfg = parse_config(text).unwrap();
        let once = serialize_config(&cfg);
        let reparsed = parse_config(&once).unwrap();
        assert_eq!(reparsed, cfg);
        assert_eq!(serialize_config(&reparsed), once);
    }
}

#[test]
fn simulate_writes_series_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[stepper]\ndt = 1e-3\nmax_time = 2\nsample_stride = 100\n[experiment]\nkind = simulate\neta = 0.1\n",
    );
    let out = tmp.path().join("out");
    let res = kgorbit(&cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,a0,b0,H,J,I,r"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 7);
    assert_eq!(first[1], "1.0000000000000001e-1");
    assert_eq!(csv.lines().count(), 1 + 21);
    assert!(!csv.contains('\r'));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert!(summary["H_drift"].as_f64().unwrap() < 1e-8);
    assert_eq!(summary["max_J"].as_f64().unwrap(), 0.0);
}

#[test]
fn period_sweep_reports_the_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[stepper]\ndt = 1e-3\n[experiment]\nkind = period-sweep\netas = 1e-1,1e-2,1e-3,1e-4\n");
    let out = tmp.path().join("out");
    let res = kgorbit(&cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(0));
    let summary = json(&out.join("summary.json"));
    assert!(summary["R2"].as_f64().unwrap() >= 0.999);
    assert!(summary["A"].as_f64().unwrap() > 0.0);
    assert!(summary.get("B").is_some());
    let csv = fs::read_to_string(out.join("periods.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("eta,T\n"));
}

#[test]
fn stability_report_has_loop_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[stepper]\ndt = 2e-3\n[experiment]\nkind = stability\netas = 0.05\nseeds = 1\n",
    );
    let out = tmp.path().join("out");
    let res = kgorbit(&cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = json(&out.join("summary.json"));
    let records = summary["reports"][0]["loop_records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(summary["reports"][0]["j_within_regime"], true);
    let member = json(&out.join("runs").join("stability-0000.json"));
    assert_eq!(member["schema_version"], 1);
    assert_eq!(member["result"], summary["reports"][0]);
    assert_eq!(fs::read_to_string(out.join("loops.csv")).unwrap().lines().count(), 4);
}

#[test]
fn sweeps_are_independent_of_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[stepper]\ndt = 2e-3\n[experiment]\nkind = first-return\netas = 0.1,0.05\nseeds = 1,2\n",
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ra = kgorbit(&cfg, &a, &["--workers", "1"]);
    let rb = Command::new(env!("CARGO_BIN_EXE_kgorbit"))
        .env("KGORBIT_WORKERS", "4")
        .args(["--config", cfg.to_str().unwrap(), "--output", b.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(ra.status.code(), rb.status.code());
    assert_eq!(
        fs::read_to_string(a.join("summary.json")).unwrap(),
        fs::read_to_string(b.join("summary.json")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(a.join("first_return.csv")).unwrap(),
        fs::read_to_string(b.join("first_return.csv")).unwrap()
    );
}

#[test]
fn anomalous_exponent_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[stepper]\ndt = 2e-3\n[experiment]\nkind = first-return\netas = 0.1,0.05,0.02\nseeds = 4\n",
    );
    let out = tmp.path().join("out");
    let res = kgorbit(&cfg, &out, &["--format", "json"]);
    assert_eq!(res.status.code(), Some(2));
    let summary = json(&out.join("summary.json"));
    assert!(!summary["anomalies"].as_array().unwrap().is_empty());
    assert!(summary["exponent_fit"]["slope"].as_f64().is_some());
    assert!(!out.join("first_return.csv").exists());
}

#[test]
fn seed_flag_overrides_configured_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[stepper]\ndt = 1e-3\n[experiment]\nkind = energy-check\netas = 0.1,0.05,0.02\nseeds = 1,2\n",
    );
    let out = tmp.path().join("out");
    let res = kgorbit(&cfg, &out, &["--seed", "77"]);
    assert_eq!(res.status.code(), Some(0));
    let summary = json(&out.join("summary.json"));
    let members = summary["members"].as_array().unwrap();
    assert_eq!(members.len(), 3);
    assert!(members.iter().all(|m| m["seed"] == 77));
}

#[test]
fn invalid_configs_exit_with_an_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        (
            "[model]\nm = 7\np = 1\ndim = 1\ncutoff = 8\n[stepper]\ndt = 1e-3\n[experiment]\nkind = simulate\neta = 0.1\n",
            "validation_error",
            "model",
        ),
        (
            "[model]\nm = 0.5\np = 1\ndim = 1\ncutoff = 8\nfoo = 1\n[stepper]\ndt = 1e-3\n[experiment]\nkind = simulate\neta = 0.1\n",
            "parse_error",
            "foo",
        ),
        (
            "[model]\nm = 0.5\np = 1\ndim = 1\ncutoff = 8\n[stepper]\ndt = 1e-3\n[experiment]\nkind = stability\netas = 0.05\n",
            "validation_error",
            "seeds",
        ),
    ];
    for (text, kind, key) in cases {
        let path = tmp.path().join("bad.cfg");
        fs::write(&path, text).unwrap();
        let res = kgorbit(&path, &out, &[]);
        assert_eq!(res.status.code(), Some(1));
        let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
        assert_eq!(err["error"], kind);
        assert_eq!(err["key"], key);
        assert_eq!(err["schema_version"], 1);
    }
    let res = kgorbit(&tmp.path().join("missing.cfg"), &out, &[]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn floquet_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[stepper]\ndt = 1e-3\n[experiment]\nkind = floquet\netas = 0.1,0.01\nlambdas = 6.283185307179586\n",
    );
    let out = tmp.path().join("out");
    let res = kgorbit(&cfg, &out, &["--format", "csv"]);
    assert_eq!(res.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("floquet.csv")).unwrap();
    assert!(csv.starts_with("eta,lambda,trace,det,class,mu1_re,mu1_im,mu2_re,mu2_im\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(!out.join("summary.json").exists());
}
