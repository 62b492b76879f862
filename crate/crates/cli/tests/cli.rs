use std::path::Path;
use std::process::{Command, Output};

fn aircomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aircomm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        "system = \"qam_baseline\"\nseed = 2\n[sweep]\nsnr_db = [5.0, 7.0]\nbit_budget = 10000\nmax_bits = 10000\ntarget_ber = 1e-3\ncoded = false\n",
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn sweep_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    let run = aircomm(&["sweep", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let ber = std::fs::read_to_string(out.join("ber.csv")).unwrap();
    assert_eq!(ber.lines().count(), 3, "{ber}");
    assert!(out.join("manifest.txt").is_file());
}

#[test]
fn seed_override_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = aircomm(&[
            "sweep",
            "--config",
            &config,
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success());
    }
    let read = |d: &Path| std::fs::read(d.join("ber.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn unknown_system_is_rejected() {
    let run = aircomm(&["sweep", "--system", "no_such_system"]);
    assert!(!run.status.success());
    assert!(!run.stderr.is_empty());
}

#[test]
fn missing_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let run = aircomm(&["sweep", "--config", missing.to_str().unwrap()]);
    assert!(!run.status.success());
    assert!(!run.stderr.is_empty());
}
