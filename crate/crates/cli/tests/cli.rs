use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_srlmpc"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_config_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("min.cfg");
    std::fs::write(&cfg, "horizon = 20\nshort_horizon = 10\n").unwrap();
    let out = run(&["validate-config", "--config", path(&cfg)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# srlmpc scenario v1\n"));
    assert!(text.contains("alpha = 0.9\n"));
    assert!(text.contains("horizon = 20\n"));

    // the echo is itself a valid config
    let echo = dir.path().join("echo.cfg");
    std::fs::write(&echo, &text).unwrap();
    let again = run(&["validate-config", "--config", path(&echo)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "horizon = 70\nshort_horizon = 70\n").unwrap();
    let out = run(&["validate-config", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("short_horizon"));

    std::fs::write(&cfg, "speed_limit = 3\n").unwrap();
    let out = run(&["run", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("speed_limit"));

    let out = run(&["run", "--config", path(&dir.path().join("missing.cfg"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_start_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tight.cfg");
    std::fs::write(&cfg, "initial_gap = 5\nfollower_speed = 60\n").unwrap();
    let out = run(&["run", "--config", path(&cfg), "--mode", "baseline"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_writes_stable_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&[
            "run",
            "--config",
            path(&config("bridge.cfg")),
            "--mode",
            "srlmpc",
            "--seed",
            "7",
            "--out-dir",
            path(dir.path()),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in ["steps.csv", "iterations.csv", "plot.csv", "scenario.cfg"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
    let echo = std::fs::read_to_string(a.path().join("scenario.cfg")).unwrap();
    assert!(echo.contains("seed = 7\n"));
    let steps = std::fs::read_to_string(a.path().join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 2 + 71);
}

#[test]
fn max_iters_flag_caps_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--config",
        path(&config("bridge.cfg")),
        "--max-iters",
        "1",
        "--out-dir",
        path(dir.path()),
    ]);
    assert!(out.status.success());
    let iters = std::fs::read_to_string(dir.path().join("iterations.csv")).unwrap();
    // header, columns, seed, one iteration
    assert_eq!(iters.lines().count(), 4);
}

#[test]
fn compare_prints_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "compare",
        "--config",
        path(&config("bridge.cfg")),
        "--out-dir",
        path(dir.path()),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("baseline")));
    assert!(text.lines().any(|l| l.starts_with("srlmpc")));
    let table = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(table.starts_with(
        "# srlmpc comparison v1\nmode,energy,dropped,saturated,zone_steps,min_ttc,converged\n"
    ));
    assert!(dir.path().join("baseline/steps.csv").exists());
    assert!(dir.path().join("srlmpc/plot.csv").exists());
}

#[test]
fn unknown_mode_is_rejected() {
    let out = run(&[
        "run",
        "--config",
        path(&config("bridge.cfg")),
        "--mode",
        "greedy",
    ]);
    assert!(!out.status.success());
}
