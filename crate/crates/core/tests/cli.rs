use std::process::Command;

fn dklab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dklab"))
}

#[test]
fn qform_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dklab()
        .args(["test-qform", "--beta", "2", "--trials", "50", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PASS q-form"));
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("reports.json")).unwrap()).unwrap();
    assert_eq!(reports[0]["kind"], "qform_equivalence");
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dklab().args(["report", "--in"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_and_missing_config_are_usage_errors() {
    assert_eq!(dklab().args(["simulate", "--bogus"]).status().unwrap().code(), Some(2));
    assert_eq!(dklab().args(["run"]).output().unwrap().status.code(), Some(2));
    assert_eq!(dklab().args(["run", "--config", "/nonexistent.toml"]).output().unwrap().status.code(), Some(3));
}

#[test]
fn simulate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dklab()
        .args(["simulate", "--N", "8", "--beta", "1.5", "--T", "0.002", "--dt", "1e-3", "--replicas", "3", "--mode", "common_noise", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(dir.path().join("trajectories.tsv")).unwrap();
    // header comment, column row, 3 replicas x 3 saves
    assert_eq!(traj.lines().count(), 2 + 9);
    assert!(traj.lines().nth(1).unwrap().ends_with("x_8"));
    let rep = dklab().args(["report", "--in"]).arg(dir.path()).output().unwrap();
    assert_eq!(rep.status.code(), Some(0));
}

#[test]
fn failing_check_exits_one_with_records() {
    let dir = tempfile::tempdir().unwrap();
    // frozen-frame paths at N=16 collide almost at once, starving the Lyapunov check
    let out = dklab()
        .args(["test-lyapunov", "--N", "16", "--beta", "1.2", "--T", "0.01", "--dt", "1e-4", "--replicas", "20", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    let code = out.status.code();
    assert!(code == Some(1) || code == Some(3), "{code:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["all_pass"], false);
    assert!(manifest["tests"].as_array().unwrap().iter().any(|t| t["pass"] == false));
}

#[test]
fn bad_thread_override_is_rejected() {
    let out = dklab().env("DKLAB_THREADS", "zero").args(["test-qform", "--trials", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
