use std::fs;
use std::path::Path;
use std::process::Command;

fn jcim(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_jcim"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("spawn jcim")
}

fn only_run(out: &Path, exp: &str) -> std::path::PathBuf {
    let mut runs: Vec<_> = fs::read_dir(out.join(exp)).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    runs.pop().unwrap()
}

#[test]
fn trace_writes_results_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = jcim(dir.path(), &["trace-iarm"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = only_run(dir.path(), "trace-iarm");
    let mut rdr = csv::Reader::from_path(run.join("results.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 13);
    assert_eq!(&rows[12][1], "9¹0¹0¹6");
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["experiment"], "iarm_trace");
}

#[test]
fn kernel_from_config_with_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.json");
    fs::write(
        &cfg,
        r#"{"kernel": {"random": {"M": 2, "K": 6, "N": 5, "bits": 6, "signed": true, "seed": 4, "z_kind": "ternary"}}}"#,
    )
    .unwrap();
    let o = jcim(dir.path(), &["kernel", "--config", cfg.to_str().unwrap(), "--dump-counters", "--dump-state"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("oracle=match"));
    let run = only_run(dir.path(), "kernel");
    for f in ["results.csv", "y.csv", "counters.csv", "state.txt", "config.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let y = fs::read_to_string(run.join("y.csv")).unwrap();
    assert_eq!(y.lines().count(), 2);
    assert!(jcim::fabric::Subarray::load(&fs::read_to_string(run.join("state.txt")).unwrap()).is_ok());
}

#[test]
fn emit_uprog_prints_listing() {
    let dir = tempfile::tempdir().unwrap();
    let o = jcim(dir.path(), &["trace-iarm", "--emit-uprog", "3,2"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("AAP") || l.starts_with("AP")).count() >= 7 * 3 + 7);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"radices": [3]}"#).unwrap();
    let o = jcim(dir.path(), &["opcount", "--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = jcim(dir.path(), &["kernel", "--backend", "magic"]);
    assert!(!o.status.success());
}

#[test]
fn fault_sweep_small() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("f.json");
    fs::write(&cfg, r#"{"fault_p": [0.1], "fault_r": [2], "fault_trials": 20000}"#).unwrap();
    let o = jcim(dir.path(), &["faults", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = only_run(dir.path(), "faults");
    let mut rdr = csv::Reader::from_path(run.join("results.csv")).unwrap();
    let n = rdr.records().count();
    assert_eq!(n, 2);
}
