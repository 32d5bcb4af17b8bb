use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_penselect"))
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn constants_prints_oracle_constant() {
    let out = bin().arg("constants").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("C(2)=10\n"), "{text}");
    assert!(text.contains("kappa = 18"));
    // header plus D = 1..20
    let rows = text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count();
    assert_eq!(rows, 20);
}

#[test]
fn missing_config_exits_2() {
    let out = bin()
        .args(["oracle", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"kind\": \"oracle\", ").unwrap();
    let out = bin().arg("oracle").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // kind mismatch
    let out = bin()
        .arg("deviation-chi")
        .arg("--config")
        .arg(configs_dir().join("default/oracle_step.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn select_writes_selection_json() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("sel.json");
    let out = bin()
        .arg("select")
        .arg("--config")
        .arg(configs_dir().join("step256.json"))
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!(v["chosen_id"].is_string());
    assert!(v["per_model"].as_array().unwrap().len() > 1);
}

#[test]
fn experiment_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("chi.json");
    let out = bin()
        .arg("deviation-chi")
        .arg("--config")
        .arg(configs_dir().join("default/chi_gaussian.json"))
        .args(["--trials", "2000", "--seed", "9", "--out"])
        .arg(&out_path)
        .env("PENSELECT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["config"]["trials"], 2000);
    assert_eq!(report["config"]["seed"], 9);
    assert_eq!(report["all_pass"], true);
    let csv = std::fs::read_to_string(dir.path().join("chi.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("experiment,x,u,empirical,bound,stderr,pass"));
    assert!(lines.all(|l| l.split(',').count() == 7 && l.ends_with("true")));
}
