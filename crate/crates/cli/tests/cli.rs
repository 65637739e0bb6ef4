// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sieve-mmr"))
        .args(args)
        .env_remove("SIEVE_MMR_SCENARIOS")
        .output()
        .expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sieve-mmr-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn report(args: &[&str]) -> (serde_json::Value, Option<i32>) {
    let o = bin(args);
    (
        serde_json::from_str(&stdout(&o)).expect("json report"),
        o.status.code(),
    )
}

#[test]
fn run_fig3_passes() {
    let (r, code) = report(&["run", "fig3"]);
    assert_eq!(code, Some(0));
    assert_eq!(r["passed"], true);
    assert_eq!(r["scenario"], "fig3");
    // n1's step-2 filtered set: the two correct step-1 messages and one of n4's.
    let d = r["deliveries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["node"] == "n1" && d["step"] == 2)
        .unwrap();
    let mut senders: Vec<&str> = d["messages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["sender"].as_str().unwrap())
        .collect();
    senders.sort();
    assert_eq!(senders, ["n1", "n2", "n4"]);
    assert!(d["messages"]
        .as_array()
        .unwrap()
        .iter()
        .all(|m| m["timestamp"] == 1));
}

#[test]
fn no_filter_reports_ttrb1_failure_but_exits_zero() {
    let (r, code) = report(&["run", "fig2", "--mode", "no-filter"]);
    assert_eq!(code, Some(0));
    let ttrb1 = r["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["name"] == "ttrb1")
        .unwrap();
    assert_eq!(ttrb1["passed"], false);
    assert_eq!(ttrb1["asserted"], false);
    assert!(ttrb1["first_failure"]["detail"].is_string());
}

#[test]
fn violation_scenario_exits_zero_with_failed_audit() {
    let (r, code) = report(&["run", "supremacy-violation"]);
    assert_eq!(code, Some(0));
    assert!(r["supremacy_violation"].is_array());
}

#[test]
fn trace_digest_is_deterministic_and_seed_sensitive() {
    let a = stdout(&bin(&[
        "run",
        "all-correct",
        "--seed",
        "5",
        "--trace-digest",
    ]));
    let b = stdout(&bin(&[
        "run",
        "all-correct",
        "--seed",
        "5",
        "--trace-digest",
    ]));
    let c = stdout(&bin(&[
        "run",
        "all-correct",
        "--seed",
        "6",
        "--trace-digest",
    ]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.trim().len(), 64);
}

#[test]
fn trace_file_is_json_lines() {
    let path = tmp("fig4.jsonl");
    let o = bin(&["run", "fig4", "--trace", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"]
                .as_str()
                .unwrap()
                .to_owned()
        })
        .collect();
    for k in [
        "send",
        "receive",
        "dpow-request",
        "dpow-deliver",
        "ttrb-deliver",
    ] {
        assert!(kinds.iter().any(|x| x == k), "no {k} event");
    }
}

#[test]
fn all_correct_latency_is_three() {
    let (r, _) = report(&["run", "all-correct"]);
    assert_eq!(r["latency"]["min"], 3);
    assert_eq!(r["latency"]["max"], 3);
}

#[test]
fn horizon_override_without_commits_is_marked() {
    let (r, code) = report(&["run", "all-correct", "--horizon", "2"]);
    assert_eq!(code, Some(0));
    assert_eq!(r["horizon"], 2);
    assert_eq!(r["latency"]["no_commits"], true);
}

#[test]
fn sweep_rows_and_empty_range() {
    let o = bin(&["sweep", "all-correct", "--seeds", "0..3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("seed,passed"));
    assert!(lines[1].starts_with("0,true,"));

    let o = bin(&["sweep", "all-correct", "--seeds", "4..4"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn sweep_writes_output_file() {
    let path = tmp("sweep.csv");
    let o = bin(&[
        "sweep",
        "fig5",
        "--seeds",
        "0..=1",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
}

#[test]
fn pow_tune() {
    let o = bin(&["pow", "tune", "--target-bits", "40", "--min-work", "1/2"]);
    assert!(stdout(&o).starts_with("k = 41"));
    let o = bin(&["pow", "tune", "--target-bits", "40", "--min-work", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pow_prove_verify_round_trip_and_truncation() {
    let proof = tmp("proof.bin");
    let p = proof.to_str().unwrap();
    let o = bin(&[
        "pow", "prove", "--chi", "00ff", "--w", "1024", "--k", "8", "--out", p,
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = bin(&[
        "pow", "verify", "--chi", "00ff", "--w", "1024", "--k", "8", "--proof", p,
    ]);
    assert_eq!(stdout(&o).trim(), "valid");
    assert_eq!(o.status.code(), Some(0));

    let o = bin(&[
        "pow", "verify", "--chi", "00fe", "--w", "1024", "--k", "8", "--proof", p,
    ]);
    assert_eq!(stdout(&o).trim(), "invalid");
    assert_eq!(o.status.code(), Some(1));

    let bytes = std::fs::read(&proof).unwrap();
    let cut = tmp("proof-cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = bin(&[
        "pow",
        "verify",
        "--chi",
        "00ff",
        "--w",
        "1024",
        "--k",
        "8",
        "--proof",
        cut.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed"));
}

#[test]
fn validate_and_scenario_dir() {
    let o = bin(&["validate", "fig3"]);
    assert!(stdout(&o).starts_with("ok fig3 "));

    let dir = tmp("scenarios");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("broken.toml"), "version = 1\nname = \"broken\"\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sieve-mmr"))
        .args(["validate", "broken"])
        .env("SIEVE_MMR_SCENARIOS", &dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = bin(&["run", "no-such-scenario"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_mode_is_rejected() {
    let o = bin(&["run", "fig3", "--mode", "bogus"]);
    assert_ne!(o.status.code(), Some(0));
}
