mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::Ordering;

use common::*;
use ponzilens_core::asm::assemble;
use ponzilens_core::bytecode::to_hex;
use ponzilens_core::fixtures::{diamonds, CHAIN, WITHDRAW};
use serde_json::Value;

fn ponzilens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ponzilens"))
        .args(args)
        .env_remove("PONZILENS_CACHE_DIR")
        .env_remove("PONZILENS_RPC_URL")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn chain_file_has_the_all_true_group() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "chain.hex", CHAIN.hex);
    let r = json(&ponzilens(&["analyze", &file]));
    let sigs: Vec<&Value> = r["group_level"].as_array().unwrap().iter().map(|g| &g["signature"]).collect();
    let all = serde_json::json!({"investing": true, "payment": true, "has_loop": true, "rewarding": true});
    assert_eq!(sigs.iter().filter(|s| ***s == all).count(), 1, "{sigs:?}");
}

#[test]
fn empty_file_gives_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "empty.hex", "");
    let r = json(&ponzilens(&["analyze", &file]));
    assert_eq!(r["summary"]["enumerated_paths"], 0);
    assert_eq!(r["summary"]["feasible_paths"], 0);
}

#[test]
fn path_explosion_reports_truncation() {
    let hex = to_hex(&assemble(&diamonds(13)).unwrap());
    let r = json(&ponzilens(&["analyze", &hex, "--max-paths", "500"]));
    assert_eq!(r["summary"]["truncated"], true);
    assert_eq!(r["summary"]["enumerated_paths"], 500);
    assert!(r["diagnostics"].as_array().unwrap().iter().any(|d| d["code"] == "path-limit"));
}

#[test]
fn out_dot_and_trace_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let (out, dot, trace) = (dir.path().join("r.json"), dir.path().join("cfg.dot"), dir.path().join("t.json"));
    ok(&ponzilens(&[
        "analyze",
        WITHDRAW.hex,
        "--out",
        out.to_str().unwrap(),
        "--emit-cfg-dot",
        dot.to_str().unwrap(),
        "--dump-trace",
        "1",
        "--trace-out",
        trace.to_str().unwrap(),
    ]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["schema_version"], "1");
    assert!(std::fs::read_to_string(dot).unwrap().starts_with("digraph"));
    let t: Value = serde_json::from_str(&std::fs::read_to_string(trace).unwrap()).unwrap();
    assert_eq!(t["path_id"], 1);
    assert!(!t["events"].as_array().unwrap().is_empty());
}

#[test]
fn unknown_trace_id_is_an_error() {
    let out = ponzilens(&["analyze", WITHDRAW.hex, "--dump-trace", "99"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no path 99"));
}

#[test]
fn invalid_arguments_fail() {
    assert!(!ponzilens(&["analyze", WITHDRAW.hex, "--max-paths", "0"]).status.success());
    assert!(!ponzilens(&["analyze", WITHDRAW.hex, "--solver", "nope"]).status.success());
    assert!(!ponzilens(&["analyze", "0x6"]).status.success());
    assert!(!ponzilens(&["analyze"]).status.success());
}

#[test]
fn malformed_address_is_rejected_before_fetching() {
    let node = mock_node(&[]);
    let out = ponzilens(&["analyze", "--address", "0x12", "--rpc", &node.url]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed address"));
    assert_eq!(node.requests.load(Ordering::SeqCst), 0);
}

#[test]
fn address_input_is_fetched_once_with_a_cache() {
    let node = mock_node(&[(CONTRACT, WITHDRAW.hex)]);
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().to_str().unwrap();
    let args = ["analyze", "--address", CONTRACT, "--rpc", &node.url, "--cache-dir", cache];
    let first = ok(&ponzilens(&args));
    let second = ok(&ponzilens(&args));
    assert_eq!(first, second);
    assert_eq!(node.requests.load(Ordering::SeqCst), 1);
    let r: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(r["contract"]["address"], CONTRACT);
    assert!(dir.path().join("reports").read_dir().unwrap().count() == 1);
}

#[test]
fn cached_and_fresh_reports_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().to_str().unwrap();
    let fresh = ok(&ponzilens(&["analyze", CHAIN.hex]));
    let filled = ok(&ponzilens(&["analyze", CHAIN.hex, "--cache-dir", cache]));
    let hit = ok(&ponzilens(&["analyze", CHAIN.hex, "--cache-dir", cache]));
    assert_eq!(fresh, filled);
    assert_eq!(fresh, hit);
}

fn fake_solver(dir: &Path, answer: &str) -> String {
    let log = dir.join("queries.smt2");
    let script =
        write(dir, &format!("solver-{answer}.sh"), &format!("#!/bin/sh\ncat >> '{}'\necho {answer}\n", log.display()));
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    script
}

#[test]
fn external_solver_decides_feasibility() {
    let dir = tempfile::tempdir().unwrap();
    let unsat = fake_solver(dir.path(), "unsat");
    let r = json(&ponzilens(&["analyze", WITHDRAW.hex, "--solver-command", &unsat]));
    assert_eq!(r["settings"]["solver"], "smtlib-command");
    assert_eq!(r["summary"]["feasible_paths"], 0);
    assert!(r["summary"]["infeasible_paths"].as_u64().unwrap() > 0);
    let queries = std::fs::read_to_string(dir.path().join("queries.smt2")).unwrap();
    assert!(queries.contains("(check-sat)"));

    let sat = fake_solver(dir.path(), "sat");
    let r = json(&ponzilens(&["analyze", WITHDRAW.hex, "--solver-command", &sat]));
    assert_eq!(r["summary"]["feasible_paths"], r["summary"]["enumerated_paths"]);
}

#[test]
fn investing_rule_is_selectable() {
    let r = json(&ponzilens(&["analyze", WITHDRAW.hex, "--investing-rule", "caller-keyed-deposit"]));
    assert_eq!(r["settings"]["investing_rule"], "caller-keyed-deposit");
    assert!(r["investor_slots"].as_array().unwrap().iter().any(|s| s == "map:2"));
}

#[test]
fn disasm_and_schema_print() {
    let listing = ok(&ponzilens(&["disasm", "0x600160020160005500"]));
    assert_eq!(listing.lines().count(), 6);
    assert!(listing.contains("SSTORE"));
    let lines = ok(&ponzilens(&["disasm", "0x6001", "--json"]));
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["mnemonic"], "PUSH1");
    let schema = json(&ponzilens(&["schema"]));
    assert!(schema["properties"]["group_level"].is_object());
}
