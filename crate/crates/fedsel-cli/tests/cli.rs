//! End-to-end checks of the `fedsel` binary: run, report, and traces verbs
//! through real processes, files, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const ROUND_HEADER: &str = "round,wallclock_s,round_delay_s,selected_clients,train_loss,test_metric";

fn fedsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsel"))
        .args(args)
        .output()
        .expect("failed to spawn fedsel")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMOKE_CONFIG: &str = r#"
schema_version = 1
seeds = [3]

[dataset]
type = "quadratic"
m = 5
n = 12
d = 4
eig_range = [1.0, 6.0]
noise_std = 0.01

[delays]
type = "synthetic"

[[selectors]]
type = "random"
k = 2

[[selectors]]
type = "sampling"
k = 2

[engine]
max_rounds = 5
"#;

#[test]
fn run_writes_expected_csvs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE_CONFIG);
    let out = dir.path().join("runs");
    let result = fedsel(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );

    for name in ["random_seed3.csv", "sampling_seed3.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ROUND_HEADER, "{name}");
        assert_eq!(text.lines().count(), 7, "{name}: header plus rounds 0..=5");
        // Round and cumulative time are strictly increasing.
        let mut prev_round = -1i64;
        let mut prev_time = -1.0;
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let round: i64 = fields[0].parse().unwrap();
            let time: f64 = fields[1].parse().unwrap();
            assert!(round > prev_round && time > prev_time, "{name}: {line}");
            prev_round = round;
            prev_time = time;
        }
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("label,seed,status,rounds,"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn oversized_k_fails_naming_the_selector_block() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMOKE_CONFIG.replace("k = 2\n\n[engine]", "k = 9\n\n[engine]"));
    let out = dir.path().join("runs");
    let result = fedsel(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("selectors[1]"), "stderr: {stderr}");
    assert!(stderr.contains("sampling"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMOKE_CONFIG.replace("noise_std = 0.01", "noise_std = 0.01\nnoise = 1"));
    let result = fedsel(&["run", "--config", config.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("noise"));
}

#[test]
fn report_tabulates_median_and_per_seed_times() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &SMOKE_CONFIG
            .replace("seeds = [3]", "seeds = [1, 2, 3]")
            .replace("max_rounds = 5", "max_rounds = 300\ntarget_metric = \"train_loss\"\ntarget_value = 0.05"),
    );
    let out = dir.path().join("runs");
    let run = fedsel(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));

    let report = fedsel(&["report", "--runs", out.to_str().unwrap(), "--target", "0.05"]);
    assert!(report.status.success(), "stderr: {}", String::from_utf8_lossy(&report.stderr));
    let stdout = String::from_utf8_lossy(&report.stdout);
    assert!(stdout.contains("label"), "stdout: {stdout}");
    assert!(stdout.contains("median"), "stdout: {stdout}");

    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("label,seed,time_to_target_s\n"));
    // Two labels, three seeds each, plus a median row per label.
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    for label in ["random", "sampling"] {
        assert!(csv.contains(&format!("{label},median,")));
    }
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let result = fedsel(&["report", "--runs", dir.path().to_str().unwrap(), "--target", "0.1"]);
    assert!(!result.status.success());
}

#[test]
fn synthesized_trace_feeds_a_trace_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("delays.csv");
    let synth = fedsel(&[
        "traces", "synth", "--m", "5", "--out", trace.to_str().unwrap(),
        "--mode", "lognormal", "--median-s", "20", "--spread", "1.0", "--seed", "9",
    ]);
    assert!(synth.status.success(), "stderr: {}", String::from_utf8_lossy(&synth.stderr));
    let parsed = fedsel_core::delays::read_trace(&trace).unwrap();
    assert_eq!(parsed.mean_delays.len(), 5);
    assert!(parsed.mean_delays.iter().all(|d| *d > 0.0));

    let config = write_config(
        dir.path(),
        &SMOKE_CONFIG.replace(
            "[delays]\ntype = \"synthetic\"",
            "[delays]\ntype = \"trace\"\npath = \"delays.csv\"\nlognormal_sigma = 0.5",
        ),
    );
    let out = dir.path().join("runs");
    let result = fedsel(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    assert!(out.join("random_seed3.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE_CONFIG);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let result = fedsel(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(result.status.success());
    }
    for name in ["random_seed3.csv", "sampling_seed3.csv", "summary.csv"] {
        assert_eq!(
            fs::read(out1.join(name)).unwrap(),
            fs::read(out2.join(name)).unwrap(),
            "{name} differs"
        );
    }
}
