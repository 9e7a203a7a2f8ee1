use std::path::Path;
use std::process::{Command, Output};

use mp_core::csvio::to_export_string;
use mp_core::fixture;

fn mp(repo: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mp")).arg("--repo").arg(repo).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Repository with the city table and both example branches, built one process per step.
fn example_repo(dir: &Path) -> std::path::PathBuf {
    let csv = dir.join("cities.csv");
    std::fs::write(&csv, fixture::CSV).unwrap();
    let repo = dir.join("repo");
    ok(mp(&repo, &["init", csv.to_str().unwrap()]));
    for s in &fixture::STATEMENTS[..2] {
        ok(mp(&repo, &["commit", "-b", "alvarez", s]));
    }
    for s in &fixture::STATEMENTS[2..] {
        ok(mp(&repo, &["commit", "-b", "bano", s]));
    }
    repo
}

#[test]
fn detect_flags_san_jose_and_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let repo = example_repo(dir.path());
    let out = mp(&repo, &["detect", "alvarez", "bano"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains(fixture::SAN_JOSE));

    let out = mp(&repo, &["oracle", "alvarez", "bano", "--exhaustive", "--json"]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["conflict_set"], serde_json::json!([fixture::SAN_JOSE]));
    assert_eq!(v["exhaustive_conflict_set"], v["conflict_set"]);
}

#[test]
fn disjoint_branches_merge_automatically() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cities.csv");
    std::fs::write(&csv, fixture::CSV).unwrap();
    let repo = dir.path().join("repo");
    ok(mp(&repo, &["init", csv.to_str().unwrap()]));
    ok(mp(&repo, &["commit", "-b", "x", "UPDATE db SET Electricity = 1 WHERE City = 'Los Angeles'"]));
    ok(mp(&repo, &["commit", "-b", "y", "DELETE FROM db WHERE City = 'Seattle'"]));
    assert_eq!(mp(&repo, &["detect", "x", "y"]).status.code(), Some(0));

    // no questions needed, so stdin is never read
    let merged = ok(mp(&repo, &["merge", "x", "y", "--target", "both"]));
    assert!(merged.contains("0 question"));
    let table = ok(mp(&repo, &["show", "-b", "both"]));
    assert!(!table.contains("Seattle"));
}

#[test]
fn malformed_statement_exits_two_with_a_caret() {
    let dir = tempfile::tempdir().unwrap();
    let repo = example_repo(dir.path());
    let out = mp(&repo, &["commit", "UPDATE db SET Electricity = WHERE City = 'Seattle'"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('^'));
    let out = mp(&repo, &["commit", "UPDATE db SET Nope = 1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fixture_statements_parse_to_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let repo = example_repo(dir.path());
    for s in fixture::STATEMENTS {
        let once = ok(mp(&repo, &["parse", s]));
        let twice = ok(mp(&repo, &["parse", once.trim()]));
        assert_eq!(once, twice, "{s}");
    }
}

#[test]
fn clones_replay_to_the_same_tables() {
    let dir = tempfile::tempdir().unwrap();
    let repo = example_repo(dir.path());
    let copy = dir.path().join("copy");
    ok(mp(&repo, &["clone", repo.to_str().unwrap(), copy.to_str().unwrap()]));
    for branch in ["alvarez", "bano"] {
        assert_eq!(ok(mp(&repo, &["show", "-b", branch])), ok(mp(&copy, &["show", "-b", branch])), "{branch}");
    }
    assert_eq!(ok(mp(&copy, &["show", "-b", "alvarez"])), to_export_string(&fixture::alvarez_table()));
    assert_eq!(ok(mp(&copy, &["show", "-b", "bano"])), to_export_string(&fixture::bano_table()));

    // new work in the clone is pushed back and replays identically
    ok(mp(&copy, &["commit", "-b", "alvarez", "UPDATE db SET Electricity = 0 WHERE City = 'Seattle'"]));
    ok(mp(&copy, &["push", repo.to_str().unwrap(), "-b", "alvarez"]));
    assert_eq!(ok(mp(&repo, &["show", "-b", "alvarez"])), ok(mp(&copy, &["show", "-b", "alvarez"])));
    assert_eq!(ok(mp(&repo, &["log", "-b", "alvarez"])).lines().count(), 3);
}
