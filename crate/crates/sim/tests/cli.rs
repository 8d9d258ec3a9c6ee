use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cbdc-sim"));
    c.env_remove("CBDC_SIM_SUITE");
    c
}

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cbdc-sim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn report_without_timings(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn bundled_scenarios_pass_and_repeat_exactly() {
    for name in ["honest", "faults", "double_spend", "lifecycle", "ble_random"] {
        let scenario = manifest(&format!("scenarios/{name}.json"));
        let (a, b) = (tmp(&format!("{name}-a.json")), tmp(&format!("{name}-b.json")));
        for out in [&a, &b] {
            let o = run(&["run", scenario.to_str().unwrap(), "--report", out.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let (ra, rb) = (report_without_timings(&a), report_without_timings(&b));
        assert_eq!(ra, rb, "{name}");
        assert_eq!(ra["passed"], true);
    }
}

#[test]
fn seed_override_changes_the_run() {
    let scenario = manifest("scenarios/ble_random.json");
    let digest = |seed: &str| {
        let o = run(&["run", scenario.to_str().unwrap(), "--seed", seed]);
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["seed"], seed.parse::<u64>().unwrap());
        v["trace_digest"].clone()
    };
    assert_ne!(digest("1"), digest("2"));
    assert_eq!(digest("3"), digest("3"));
}

#[test]
fn exit_codes() {
    let bad = tmp("malformed.json");
    std::fs::write(&bad, "{\"name\": \"x\", \"actors\": ").unwrap();
    assert_eq!(run(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["run", "/nonexistent/scenario.json"]).status.code(), Some(2));

    let unknown_actor = tmp("unknown-actor.json");
    std::fs::write(
        &unknown_actor,
        r#"{"name": "x", "actors": {"wallets": []}, "script": [{"op": "onboard", "wallet": "ghost"}]}"#,
    )
    .unwrap();
    assert_eq!(run(&["run", unknown_actor.to_str().unwrap()]).status.code(), Some(2));

    let failing = tmp("failing.json");
    std::fs::write(
        &failing,
        r#"{"name": "x",
            "actors": {"wallets": [{"id": "a", "kyc": {"name": "A"}}]},
            "script": [{"op": "onboard", "wallet": "a"}, {"op": "issue", "wallet": "a", "amount": 5}],
            "expected": {"wallet_balances": {"a": 6}}}"#,
    )
    .unwrap();
    let o = run(&["run", failing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("expected balance a"));

    let o = bin()
        .env("CBDC_SIM_SUITE", "2")
        .args(["vectors"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn vectors_match_the_frozen_oracle_output() {
    let frozen = manifest("tests/data/reference_vectors.jsonl");
    let o = run(&["vectors"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), std::fs::read_to_string(&frozen).unwrap());
    assert_eq!(run(&["vectors", "--check", frozen.to_str().unwrap()]).status.code(), Some(0));

    let tampered = tmp("tampered.jsonl");
    let text = std::fs::read_to_string(&frozen).unwrap().replacen("948d", "948e", 1);
    std::fs::write(&tampered, text).unwrap();
    let o = run(&["vectors", "--check", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generators"));
}
