//! Exit codes and output of the command-line binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tweet-topics"));
    c.env("RUST_LOG", "warn");
    c
}

fn fixture_config() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/fixture.toml")
}

#[test]
fn full_run_then_cached_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture_config();
    let args = ["--config", config.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap()];

    let out = bin().args(args).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ran")).count(), 9);
    assert!(tmp.path().join("report.txt").is_file());

    let out = bin().args(args).arg("report").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("skipped  report"));

    let out = bin().args(args).args(["--force", "run", "--stages", "topics,report"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ran      topics") && stdout.contains("ran      report"), "{stdout}");
}

#[test]
fn usage_and_config_errors_exit_1() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().args(["--config", "/nonexistent/config.toml", "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[input]\npath = \"missing.csv\"\n").unwrap();
    let out = bin().args(["--config", bad.to_str().unwrap(), "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let out = bin().args(["run", "--stages", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    std::fs::write(&csv, "id,text\n1,\"unterminated\n2,fine\n").unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[input]\npath = \"t.csv\"\n[word_clusters]\nk = 20\n[autoencoder]\nhidden = [16]\nbottleneck = 8\n").unwrap();
    let out = bin().args(["--config", cfg.to_str().unwrap(), "run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("preprocess"));

    // Upstream artifacts missing.
    std::fs::write(&csv, "id,text\n1,hello world\n").unwrap();
    let out = bin().args(["--config", cfg.to_str().unwrap(), "encode"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
