use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mii-resil"))
}

#[test]
fn full_profile_roster_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["gen-scenarios", "--profile", "full", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1458 scenarios, 7290 tasks");
}

#[test]
fn missing_artifacts_give_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["run", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(v["error"].as_str().unwrap().contains("gen-data"), "{v}");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mii_resil_core::experiment::ExperimentConfig::desk(0);
    cfg.p_s = 1.5;
    let path = dir.path().join("bad.json");
    std::fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = bin().args(["gen-scenarios", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["kind"], "InvalidParameter");
}
