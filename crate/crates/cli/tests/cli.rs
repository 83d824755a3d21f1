use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const NOTES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../policies/notes.orb");
const SINGLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../policies/single_delegation.orb");
const MUTUAL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../policies/invalid/mutual_negation.orb");
const JUNE: &str = "2007-06-15T10:00:00Z";

fn orbac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbac")).args(args).env_remove("ORBAC_STATE").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn loaded(dir: &Path, policy: &str) -> PathBuf {
    let state = dir.join("state.orb");
    let o = orbac(&["load", policy, "--state", state.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    state
}

fn delegate_update(state: &str) -> Output {
    orbac(&["delegate", state, "--grantor", "john", "--view", "license_delegation", "--grantee", "mary", "--privilege", "update", "--target", "john_stud_notes", "--at", JUNE])
}

#[test]
fn delegated_update_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let state = loaded(dir.path(), NOTES);
    let s = state.to_str().unwrap();
    let before = orbac(&["query", s, "mary", "update", "note1", "--at", JUNE]);
    assert_eq!(before.status.code(), Some(1));
    assert_eq!(stdout(&before).trim(), "deny");
    let d = delegate_update(s);
    assert_eq!(d.status.code(), Some(0), "{}", stderr(&d));
    let after = orbac(&["query", s, "mary", "update", "note1", "--at", JUNE]);
    assert_eq!(after.status.code(), Some(0));
    assert!(stdout(&after).starts_with("allow"));
}

#[test]
fn state_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let state = loaded(dir.path(), NOTES);
    let o = Command::new(env!("CARGO_BIN_EXE_orbac"))
        .args(["query", "john", "update", "note1", "--at", JUNE, "--trace"])
        .env("ORBAC_STATE", &state)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("allow(john, update, note1)"));
}

#[test]
fn unstratifiable_policy_is_rejected() {
    let o = orbac(&["check", MUTUAL]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("not stratifiable"));
    let ok = orbac(&["check", NOTES]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
}

#[test]
fn multi_delegation_bound_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let state = loaded(dir.path(), SINGLE);
    let s = state.to_str().unwrap();
    assert_eq!(delegate_update(s).status.code(), Some(0));
    let second = orbac(&["delegate", s, "--grantor", "john", "--view", "license_delegation", "--grantee", "peter", "--privilege", "update", "--target", "john_stud_notes", "--at", JUNE]);
    assert_eq!(second.status.code(), Some(2));
    assert!(stderr(&second).contains("MultiDelegationExceeded"));
}

#[test]
fn audit_records_every_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let state = loaded(dir.path(), NOTES);
    let s = state.to_str().unwrap();
    assert_eq!(delegate_update(s).status.code(), Some(0));
    let refused = orbac(&["revoke", s, "--actor", "mary", "--object", "l1", "--at", JUNE]);
    assert_eq!(refused.status.code(), Some(2));
    let revoked = orbac(&["revoke", s, "--actor", "john", "--object", "l1", "--at", JUNE]);
    assert_eq!(revoked.status.code(), Some(0), "{}", stderr(&revoked));

    let log = std::fs::read_to_string(dir.path().join("state.orb.audit")).unwrap();
    let rows: Vec<Vec<&str>> = log.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.len() == 6));
    let seqs: Vec<u64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(seqs, vec![1, 2, 3, 4]);
    assert_eq!(&rows[1][2..], ["john", "delegate", "l1", "ok"]);
    assert_eq!(&rows[2][2..], ["mary", "revoke", "l1", "err:NotAuthorized"]);
    assert_eq!(&rows[3][2..], ["john", "revoke", "l1", "ok"]);
}

#[test]
fn oracle_check_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let state = loaded(dir.path(), NOTES);
    let s = state.to_str().unwrap();
    assert_eq!(delegate_update(s).status.code(), Some(0));
    let o = orbac(&["--check-oracle", "query", s, "mary", "update", "note1", "--at", JUNE]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 mismatches"));
}

#[test]
fn usage_errors_exit_three() {
    assert_eq!(orbac(&["query", "a", "b"]).status.code(), Some(3));
    assert_eq!(orbac(&["query", "john", "update", "note1"]).status.code(), Some(3));
    assert_eq!(orbac(&["frobnicate"]).status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let state = loaded(dir.path(), NOTES);
    let bad_time = orbac(&["query", state.to_str().unwrap(), "john", "update", "note1", "--at", "yesterday"]);
    assert_eq!(bad_time.status.code(), Some(3));
}

#[test]
fn missing_state_is_a_policy_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.orb");
    let o = orbac(&["query", missing.to_str().unwrap(), "john", "update", "note1"]);
    assert_eq!(o.status.code(), Some(2));
}
