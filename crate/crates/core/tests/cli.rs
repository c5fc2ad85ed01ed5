//! End-to-end tests that drive the compiled `air-opt` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_air-opt"))
}

fn write(dir: &TempDir, name: &str, content: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn solve_args(config: &Path, matrix: &Path, rhs: &Path, out: &Path) -> Vec<String> {
    [
        "solve",
        "--config",
        &config.display().to_string(),
        "--matrix",
        &matrix.display().to_string(),
        "--rhs",
        &rhs.display().to_string(),
        "--out",
        &out.display().to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn solve_recovers_the_sparse_point() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "run.cfg", "penalty = lpn\np = 0.1\n");
    let matrix = write(&dir, "a.txt", "1 2\n");
    let rhs = write(&dir, "b.txt", "2\n");
    let out = dir.path().join("trace.csv");
    let output = binary()
        .args(solve_args(&config, &matrix, &rhs, &out))
        .output()
        .unwrap();
    let stdout = stdout_of(&output);
    assert_eq!(output.status.code(), Some(0), "stdout: {stdout}");
    assert!(stdout.contains("status: converged"), "stdout: {stdout}");
    assert!(stdout.contains("sparsity: 1"), "stdout: {stdout}");
    assert!(stdout.contains("# effective configuration"));
    let trace = std::fs::read_to_string(&out).unwrap();
    assert!(trace.starts_with("k,J,J0,delta_G,eps,w_min,w_max,sparsity,inner_iters,kkt_residual"));
}

#[test]
fn solve_accepts_matrix_market_input() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "run.cfg", "");
    let matrix = write(
        &dir,
        "a.mtx",
        "%%MatrixMarket matrix coordinate real general\n1 2 2\n1 1 1.0\n1 2 2.0\n",
    );
    let rhs = write(
        &dir,
        "b.mtx",
        "%%MatrixMarket matrix array real general\n1 1\n2.0\n",
    );
    let out = dir.path().join("trace.csv");
    let output = binary()
        .args(solve_args(&config, &matrix, &rhs, &out))
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        stderr_of(&output)
    );
    assert!(stdout_of(&output).contains("sparsity: 1"));
}

#[test]
fn solve_leaves_its_inputs_untouched() {
    let dir = TempDir::new().unwrap();
    let config_text = "penalty = log\np = 1.5\n";
    let config = write(&dir, "run.cfg", config_text);
    let matrix = write(&dir, "a.txt", "1 2\n");
    let rhs = write(&dir, "b.txt", "2\n");
    let out = dir.path().join("trace.csv");
    let output = binary()
        .args(solve_args(&config, &matrix, &rhs, &out))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&config).unwrap(), config_text);
    assert_eq!(std::fs::read_to_string(&matrix).unwrap(), "1 2\n");
    assert_eq!(std::fs::read_to_string(&rhs).unwrap(), "2\n");
}

#[test]
fn invalid_override_exits_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "run.cfg", "");
    let matrix = write(&dir, "a.txt", "1 2\n");
    let rhs = write(&dir, "b.txt", "2\n");
    let out = dir.path().join("trace.csv");
    let mut args = solve_args(&config, &matrix, &rhs, &out);
    args.push("--set".into());
    args.push("p=1.5".into());
    let output = binary().args(args).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr_of(&output).contains("error:"));
}

#[test]
fn missing_config_exits_with_io_code() {
    let dir = TempDir::new().unwrap();
    let matrix = write(&dir, "a.txt", "1 2\n");
    let rhs = write(&dir, "b.txt", "2\n");
    let out = dir.path().join("trace.csv");
    let missing = dir.path().join("absent.cfg");
    let output = binary()
        .args(solve_args(&missing, &matrix, &rhs, &out))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn sweep_requires_a_seed() {
    let dir = TempDir::new().unwrap();
    let config = write(
        &dir,
        "sweep.cfg",
        "n = 12\nm = 8\ns_values = 1\ntrials = 1\n",
    );
    let out = dir.path().join("results.csv");
    let output = binary()
        .args([
            "sweep",
            "--config",
            &config.display().to_string(),
            "--out",
            &out.display().to_string(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr_of(&output).contains("seed"));
}

#[test]
fn sweep_writes_results_and_plot_script() {
    let dir = TempDir::new().unwrap();
    let config = write(
        &dir,
        "sweep.cfg",
        "seed = 11\nn = 12\nm = 8\ns_values = 1, 2\ntrials = 2\nrecord_timing = false\n",
    );
    let out = dir.path().join("results.csv");
    let output = binary()
        .args([
            "sweep",
            "--config",
            &config.display().to_string(),
            "--out",
            &out.display().to_string(),
        ])
        .output()
        .unwrap();
    let stdout = stdout_of(&output);
    assert_eq!(output.status.code(), Some(0), "stdout: {stdout}");
    assert!(stdout.contains("results: wrote"));
    assert!(stdout.contains("plot: wrote"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with(
        "algorithm,s,successes,trials,success_rate,mean_outer_iters,mean_wall_time_ms"
    ));
    assert!(csv.lines().count() > 1);
    let script = std::fs::read_to_string(dir.path().join("results.py")).unwrap();
    assert!(script.contains("results.csv"));
}

#[test]
fn residual_reports_a_stationary_point() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "run.cfg", "");
    let matrix = write(&dir, "a.txt", "1 2\n");
    let rhs = write(&dir, "b.txt", "2\n");
    let point = write(&dir, "x.txt", "0\n1\n");
    let output = binary()
        .args([
            "residual",
            "--config",
            &config.display().to_string(),
            "--matrix",
            &matrix.display().to_string(),
            "--rhs",
            &rhs.display().to_string(),
            "--point",
            &point.display().to_string(),
        ])
        .output()
        .unwrap();
    let stdout = stdout_of(&output);
    assert_eq!(output.status.code(), Some(0), "stdout: {stdout}");
    let line = stdout
        .lines()
        .find(|l| l.starts_with("residual:"))
        .expect("residual line");
    let value: f64 = line.trim_start_matches("residual:").trim().parse().unwrap();
    assert!(value < 1e-6, "residual {value}");
}

#[test]
fn selftest_passes_every_check() {
    let output = binary().arg("selftest").output().unwrap();
    let stdout = stdout_of(&output);
    assert_eq!(output.status.code(), Some(0), "stdout: {stdout}");
    assert!(stdout.contains("selftest:"), "stdout: {stdout}");
    assert!(stdout.contains("0 failed"), "stdout: {stdout}");
}
