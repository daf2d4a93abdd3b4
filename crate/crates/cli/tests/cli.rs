use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn splitvi(args: &[&str], out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_splitvi"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .expect("binary runs");
    status.code().expect("exited normally")
}

fn rerun_matches(args: &[&str], files: &[&str]) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(splitvi(args, a.path()), 0, "{args:?}");
    let mut with_threads = args.to_vec();
    with_threads.extend(["--threads", "3"]);
    assert_eq!(splitvi(&with_threads, b.path()), 0, "{with_threads:?}");
    for f in files {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs between reruns");
    }
}

#[test]
fn solve_is_reproducible() {
    let cfg = config("smooth.toml");
    rerun_matches(
        &["solve", "--config", cfg.to_str().unwrap(), "--delta", "0.05"],
        &["solution.csv"],
    );
}

#[test]
fn converge_is_reproducible() {
    let cfg = config("obstacle.toml");
    rerun_matches(
        &["converge", "--config", cfg.to_str().unwrap(), "--seed", "5"],
        &["convergence.csv", "convergence.txt"],
    );
}

#[test]
fn switching_is_reproducible() {
    let cfg = config("switching.toml");
    rerun_matches(&["switching", "--config", cfg.to_str().unwrap()], &["k_sweep.csv"]);
}

#[test]
fn oracle_writes_header_and_rows() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("switching.toml");
    assert_eq!(splitvi(&["oracle", "--config", cfg.to_str().unwrap()], out.path()), 0);
    let text = fs::read_to_string(out.path().join("oracle.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x0,value"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 3);
    assert!(row[2].contains('e'));
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("smooth.toml")).unwrap().replace("seed = 11", "seed = 11\nsede = 1");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    assert_eq!(splitvi(&["solve", "--config", path.to_str().unwrap()], dir.path()), 1);
}
