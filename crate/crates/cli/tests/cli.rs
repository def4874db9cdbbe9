use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adskew"))
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo/run.toml")
}

#[test]
fn missing_voter_file_is_a_config_error_naming_the_path() {
    let out = tempfile::tempdir().unwrap();
    let res = bin().args(["audiences", "--out"]).arg(out.path()).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("voter_file.csv"), "{err}");
}

#[test]
fn configured_path_that_does_not_exist_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[paths]\nvoter_file = \"absent.csv\"\n").unwrap();
    let res = bin().arg("--config").arg(&cfg).arg("skew").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("absent.csv"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[audiences]\nsize = \"many\"\n").unwrap();
    let res = bin().arg("--config").arg(&cfg).arg("world").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unreachable_endpoint_is_a_backend_failure() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("run.toml");
    std::fs::write(&cfg, "[ingest]\ndates = [\"2022-09-10\"]\ntimeout_ms = 500\n").unwrap();
    let res = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["ingest", "--endpoint", "http://127.0.0.1:9", "--max-retries", "0", "--min-delay-ms", "0"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn stages_run_one_at_a_time_on_the_demo_fixtures() {
    let out = tempfile::tempdir().unwrap();
    let replay = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo/adlib");
    for stage in ["world", "audiences", "estimate", "skew", "pageskew", "analyze", "report"] {
        let res = bin().arg("--config").arg(demo_config()).arg("--out").arg(out.path()).arg(stage).output().unwrap();
        assert!(res.status.success(), "{stage}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(out.path().join(stage).join("manifest.json").exists(), "{stage}");
    }
    let res = bin()
        .arg("--config")
        .arg(demo_config())
        .arg("--out")
        .arg(out.path())
        .args(["ingest", "--min-delay-ms", "0", "--replay-dir"])
        .arg(&replay)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("missing"));
    assert!(out.path().join("ingest/dataset.json").exists());
}

#[test]
fn seed_flag_changes_the_world() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let res = bin().arg("--out").arg(dir.path()).args(["--seed", seed, "world"]).output().unwrap();
        assert!(res.status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("world/voter_file.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}
