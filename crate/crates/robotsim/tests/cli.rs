//! End-to-end checks of the command-line driver: artifact layout,
//! byte-determinism, exit codes and the moments-only guard.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robotsim"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("robotsim_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
            seeds = [0, 1]

            [world]
            steps = 8
            window = [4, 7]
        "#,
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_csvs() {
    let dir = tmp_dir("simulate");
    let config = write_small_config(&dir);
    let status = bin()
        .args(["--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&dir)
        .arg("simulate")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.join("trajectory.csv").exists());
    assert!(dir.join("auxiliary.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn estimate_is_byte_deterministic() {
    let dir_a = tmp_dir("est_a");
    let dir_b = tmp_dir("est_b");
    let config = write_small_config(&dir_a);
    for dir in [&dir_a, &dir_b] {
        let status = bin()
            .args(["--config"])
            .arg(&config)
            .args(["--out-dir"])
            .arg(dir)
            .args(["--seed", "3", "estimate"])
            .status()
            .unwrap();
        assert!(status.success());
        assert!(dir.join("beliefs.csv").exists());
        assert!(dir.join("beliefs.svg").exists());
    }
    assert_eq!(
        std::fs::read(dir_a.join("beliefs.csv")).unwrap(),
        std::fs::read(dir_b.join("beliefs.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir_a.join("beliefs.svg")).unwrap(),
        std::fs::read(dir_b.join("beliefs.svg")).unwrap()
    );
    let _ = std::fs::remove_dir_all(&dir_a);
    let _ = std::fs::remove_dir_all(&dir_b);
}

#[test]
fn no_plots_skips_svg() {
    let dir = tmp_dir("noplot");
    let config = write_small_config(&dir);
    let status = bin()
        .args(["--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&dir)
        .args(["--no-plots", "estimate"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(!dir.join("beliefs.svg").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tmp_dir("badcfg");
    let path = dir.join("config.toml");
    std::fs::write(&path, "method = \"sorcery\"\n").unwrap();
    let status = bin()
        .args(["--config"])
        .arg(&path)
        .args(["--out-dir"])
        .arg(&dir)
        .arg("estimate")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn moments_only_blocks_evidence_subcommands() {
    let dir = tmp_dir("momo");
    let config = write_small_config(&dir);
    let status = bin()
        .args(["--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&dir)
        .args(["--moments-only", "sweep-ridge"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Plain estimation still works and reports no evidence.
    let output = bin()
        .args(["--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&dir)
        .args(["--moments-only", "--no-plots", "estimate"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("moments-only"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn ridge_method_runs_and_reports_kappa() {
    let dir = tmp_dir("ridge");
    let config = write_small_config(&dir);
    let output = bin()
        .args(["--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&dir)
        .args(["--method", "ridge", "--no-plots", "estimate"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("method ridge"));
    assert!(text.contains("kappa"));
    let _ = std::fs::remove_dir_all(&dir);
}
