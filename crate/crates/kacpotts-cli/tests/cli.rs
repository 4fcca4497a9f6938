//! End-to-end runs of the compiled binary: determinism across repeats and
//! thread counts, manifest-based reproduction, and exit-code mapping.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kacpotts"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kacpotts_cli_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &PathBuf, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

const MINIMIZE_CONFIG: &str = r#"
[model]
d = 1
n = 16
q = 3
beta = 1.0

[experiment]
kind = "minimize-rate"
multistarts = 8

[output]
profile_dumps = true
"#;

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = scratch("repeat");
    let config = write_config(&dir, MINIMIZE_CONFIG);
    for sub in ["a", "b"] {
        let status = bin()
            .args(["minimize-rate", "--config"])
            .arg(&config)
            .arg("--seed")
            .arg("11")
            .arg("--out")
            .arg(dir.join(sub))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["minimize_rate.csv", "minimize_rate.json", "best_profile.bin"] {
        let a = fs::read(dir.join("a").join(file)).unwrap();
        let b = fs::read(dir.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let dir = scratch("threads");
    let config = write_config(&dir, MINIMIZE_CONFIG);
    for (sub, threads) in [("t1", "1"), ("t4", "4")] {
        let status = bin()
            .args(["minimize-rate", "--config"])
            .arg(&config)
            .args(["--threads", threads])
            .arg("--out")
            .arg(dir.join(sub))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["minimize_rate.csv", "best_profile.bin"] {
        let a = fs::read(dir.join("t1").join(file)).unwrap();
        let b = fs::read(dir.join("t4").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs across thread counts");
    }
}

#[test]
fn manifest_reproduces_run() {
    let dir = scratch("manifest");
    let status = bin()
        .args(["prop23-identity", "--out"])
        .arg(dir.join("first"))
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .args(["prop23-identity", "--config"])
        .arg(dir.join("first").join("manifest.json"))
        .arg("--out")
        .arg(dir.join("second"))
        .status()
        .unwrap();
    assert!(status.success());
    let a = fs::read(dir.join("first").join("prop23_identity.csv")).unwrap();
    let b = fs::read(dir.join("second").join("prop23_identity.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn csv_rows_end_with_crlf() {
    let dir = scratch("crlf");
    let status = bin()
        .args(["threshold-scan", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let bytes = fs::read(dir.join("threshold_scan.csv")).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.ends_with("\r\n"));
    for line in text.split_inclusive('\n') {
        assert!(line.ends_with("\r\n"), "line without CRLF: {line:?}");
    }
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = scratch("schema");
    let config = write_config(
        &dir,
        "[model]\nd = 1\nn = 4\nq = 3\nbeta = 1.0\nbogus = 1\n\n[experiment]\nkind = \"minimize-rate\"\n",
    );
    let status = bin()
        .args(["minimize-rate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn subcritical_bad_point_exits_3() {
    let dir = scratch("nobad");
    let config = write_config(
        &dir,
        "[model]\nd = 1\nn = 16\nq = 4\nbeta = 0.5\n\n[fuzzy]\npartition = [3, 1]\n\n[experiment]\nkind = \"badpoint-demo\"\n",
    );
    let status = bin()
        .args(["badpoint-demo", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
