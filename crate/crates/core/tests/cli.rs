//! End-to-end checks of the `restless` binary.

use std::process::Command;

fn restless(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_restless"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn list_presets_shows_all_eight() {
    let (code, stdout, _) = restless(&["list-presets"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 8);
    assert!(stdout.contains("fig6-deadline-heter"));
}

#[test]
fn restart_index_reports_the_fixture_multiplier() {
    let (code, stdout, _) = restless(&["restart-index", "--show", "2"]);
    assert_eq!(code, 0);
    let line = stdout.lines().find(|l| l.starts_with("lambda_star:")).unwrap();
    let value: f64 = line.split(':').nth(1).unwrap().trim().parse().unwrap();
    assert!((-12.1..=-11.1).contains(&value));
}

#[test]
fn solve_writes_index_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, stdout, _) = restless(&["solve", "--model", "nonindexable", "--out", out]);
    assert_eq!(code, 0, "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("lagrangian_index.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("arm_type,state,lagrangian_index"));
}

#[test]
fn make_env_output_is_accepted_by_solve() {
    let dir = tempfile::tempdir().unwrap();
    let arm = dir.path().join("deadline.json");
    let arm = arm.to_str().unwrap();
    let (code, _, _) = restless(&["make-env", "--model", "deadline", "--out", arm]);
    assert_eq!(code, 0);
    let (code, stdout, _) = restless(&[
        "solve", "--model", "file", "--arm-file", arm, "--arms", "5", "--budget", "2",
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("lambda_star: -0.79"));
}

#[test]
fn config_errors_exit_with_two() {
    let (code, _, stderr) = restless(&["run", "no-such-preset"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("unknown preset"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "version = 1\nname = \"x\"\nseeds = [1]\ntypo = 3\n").unwrap();
    let (code, _, _) = restless(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2);

    let (code, _, _) = restless(&["--bogus-flag"]);
    assert_eq!(code, 2);
}

#[test]
fn missing_arm_file_exits_with_four() {
    let (code, _, _) = restless(&[
        "solve", "--model", "file", "--arm-file", "/nonexistent/arm.json",
    ]);
    assert_eq!(code, 4);
}

#[test]
fn run_from_config_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
version = 1
name = "cli-small"
seeds = [1, 2]

[experiment]
kind = "lip-vs-wip"
horizon = 2000

[experiment.env]
model = "nonindexable"
arms = 10
budget = 3
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, stdout, stderr) = restless(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("lip_reward"));
    for f in ["manifest.json", "summary.csv", "seed-1/sim_lip.csv", "seed-2/sim_wip.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn subcommand_rejects_mismatched_config_kind() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = restless(&["list-presets", "--show", "fluid-check"]);
    assert_eq!(code, 0);
    let path = dir.path().join("fluid.toml");
    std::fs::write(&path, stdout).unwrap();
    let (code, _, stderr) = restless(&["learn-dqn", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2, "{stderr}");
}
