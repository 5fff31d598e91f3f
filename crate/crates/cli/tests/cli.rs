use std::path::Path;
use std::process::{Command, Output};

fn twistlab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_twistlab"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("TOOL_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_passes_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"group":"heisenberg:1"}"#);
    let out_dir = dir.path().join("out");
    let out = twistlab(&["validate", "--config", &cfg, "--out", out_dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS group-valid"));
    assert!(out_dir.join("validate.csv").exists());
}

#[test]
fn malformed_json_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", "{\"group\": \"heisenberg:1\",");
    let out = twistlab(&["validate", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed JSON"));
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"group":"heisenberg:1"}"#);
    let out = twistlab(&["teleport", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_criterion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"group":"heisenberg:1","parameters":{"points":4,"lambda_max":2,"tol":1e-300}}"#,
    );
    let out = twistlab(&["heat-check", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL mehler-vs-eigen"));
}

#[test]
fn signature_drift_is_a_numerical_abort() {
    // J_mu = mu_1 J_std (+) mu_2 J_std: the radical appears on the coordinate axes.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"group":{"label":"split","d1":4,"d2":2,"structure":[
            [[0,-1,0,0],[1,0,0,0],[0,0,0,0],[0,0,0,0]],
            [[0,0,0,0],[0,0,0,0],[0,0,0,-1],[0,0,1,0]]]}}"#,
    );
    let out = twistlab(&["restriction-scan", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn csv_is_byte_identical_across_reruns_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"group":"free-n32","parameters":{"ell_min":2,"ell_max":4,"radial_panels":256}}"#,
    );
    let mut files = Vec::new();
    for (i, threads) in ["1", "3", "3"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{i}"));
        let out = twistlab(
            &["restriction-scan", "--config", &cfg, "--seed", "7", "--out", out_dir.to_str().unwrap()],
            Some(threads),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(std::fs::read(out_dir.join("restriction-scan.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[1], files[2]);
}

#[test]
fn report_bundle_summarizes_a_scan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"group":"heisenberg:1","parameters":{"p":1,"K_max":81}}"#);
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    assert_eq!(twistlab(&["cluster-scan", "--config", &cfg, "--out", o], None).status.code(), Some(0));
    let out = twistlab(&["report", "--config", &cfg, "--out", o], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(text.starts_with("1/1 criteria pass"), "{text}");
    assert!(out_dir.join("cluster-scan.svg").exists());
}
