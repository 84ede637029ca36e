use std::path::PathBuf;
use std::process::{Command, Output};

fn folrom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_folrom")).args(args).output().unwrap()
}

fn out_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

const SMALL: &[&str] = &["--trajectories", "60", "--points", "20", "--order", "3", "--sweeps", "2", "--backbone-samples", "10"];

#[test]
fn config_prints_overrides() {
    let out = folrom(&["config", "--builtin", "shawpierre-forced", "--ell", "2", "--modes", "1,2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("amplitude = 0.25"), "{text}");
    assert!(text.contains("ell = 2"));
    assert!(text.contains("modes = [1, 2]") || text.contains("modes = [\n    1,\n    2,\n]"), "{text}");
}

#[test]
fn validation_errors_exit_with_two() {
    assert_eq!(folrom(&["identify", "--modes", "9", "-o", out_dir("cli-bad-mode").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(folrom(&["config", "--builtin", "nonexistent"]).status.code(), Some(2));
    let dir = out_dir("cli-missing");
    let missing = dir.join("none.csv");
    assert_eq!(folrom(&["generate", "--dataset", missing.to_str().unwrap(), "-o", dir.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unreadable_config_is_an_io_error() {
    let out = folrom(&["config", "--config", "/nonexistent/folrom.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = out_dir("cli-leak");
    let mut args = vec!["run", "-o", dir.to_str().unwrap(), "--resonance-tol", "10"];
    args.extend_from_slice(SMALL);
    let out = folrom(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_then_report_from_cache() {
    let dir = out_dir("cli-run");
    let mut args = vec!["run", "-o", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let out = folrom(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("== spectrum.txt") && stdout.contains("== backbone"));
    for f in ["dataset.csv", "bundles.txt", "foliation.txt", "decoder.txt", "normal-form.txt", "backbone.csv", "cache.toml"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    args[0] = "report";
    let again = folrom(&args);
    assert!(again.status.success());
    let stderr = String::from_utf8(again.stderr).unwrap();
    assert_eq!(stderr.matches("Hit").count(), 7, "{stderr}");
    assert_eq!(String::from_utf8(again.stdout).unwrap(), stdout);
}
