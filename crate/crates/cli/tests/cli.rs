use std::path::Path;
use std::process::{Command, Output};

fn expressway(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expressway"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn default_config(dir: &Path) -> String {
    let out = expressway(&["default-config"], dir);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

/// The built-in config shrunk so a full run takes seconds.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut text = default_config(dir);
    for (from, to) in [
        ("duration_min = 500.0", "duration_min = 240.0"),
        ("events = 3", "events = 1"),
        ("hidden_dim = 64", "hidden_dim = 8"),
        ("epochs = 40", "epochs = 2"),
        ("frame_count = 300", "frame_count = 120"),
    ] {
        assert!(text.contains(from), "default config lacks `{from}`");
        text = text.replace(from, to);
    }
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn default_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text = default_config(dir.path());
    std::fs::write(dir.path().join("site.toml"), &text).unwrap();
    let again = expressway(&["--config", "site.toml", "default-config"], dir.path());
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "train_fraction = 2.0\n").unwrap();
    let out = expressway(&["--config", "bad.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train_fraction"));

    std::fs::write(dir.path().join("typo.toml"), "sed = 1\n").unwrap();
    assert_eq!(expressway(&["--config", "typo.toml", "run"], dir.path()).status.code(), Some(2));
    assert_eq!(expressway(&["--config", "missing.toml", "run"], dir.path()).status.code(), Some(2));
}

#[test]
fn unknown_stage_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = expressway(&["run", "--stages", "simulate,forecast"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("forecast"));
    assert_eq!(expressway(&["track", "--stages", "track"], dir.path()).status.code(), Some(2));
}

#[test]
fn stage_without_inputs_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = expressway(&["track", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("track"), "{err}");
}

#[test]
fn small_run_succeeds_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let first = expressway(&["--config", cfg, "--seed", "3", "--out", "o", "run"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8(first.stdout).unwrap();
    assert!(stdout.contains("gru_attention"));
    assert!(dir.path().join("o/report/report.json").is_file());

    let second = expressway(&["--config", cfg, "--seed", "3", "--out", "o", "run", "--stages", "simulate,report"], dir.path());
    assert!(second.status.success());
    let stdout = String::from_utf8(second.stdout).unwrap();
    assert!(stdout.lines().filter(|l| l.contains("reused")).count() == 2, "{stdout}");
}
