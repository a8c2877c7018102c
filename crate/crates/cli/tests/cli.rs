use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn climclub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climclub"))
        .args(args)
        .env("CLIMCLUB_DATA_DIR", data_dir())
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const ONE_TIPPING: &str = "name = \"t\"\nrate = 0.01\n[[tipping]]\nyear = 2050\nloss_pct = 0.04\n";

#[test]
fn missing_config_is_a_usage_error() {
    assert_eq!(code(&climclub(&[])), 2);
    assert_eq!(code(&climclub(&["--config", "/definitely/not/here.toml"])), 2);
    assert_eq!(code(&climclub(&["--mode", "nonsense"])), 2);
}

#[test]
fn invalid_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ONE_TIPPING);
    let out = dir.path().join("o");
    let o = climclub(&["--config", &cfg, "--set", "rate=1.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let o = climclub(&["--config", &cfg, "--set", "unknown_key=1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let bad = config(dir.path(), "rate = \"high\"\n");
    assert_eq!(code(&climclub(&["--config", &bad])), 3);
}

#[test]
fn scenario_writes_trajectory_membership_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ONE_TIPPING);
    let out = dir.path().join("o");
    let o = climclub(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectories.csv", "membership.csv", "manifest.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    // header plus 2020..=2100
    assert_eq!(fs::read_to_string(out.join("trajectories.csv")).unwrap().lines().count(), 82);
    let stdout = String::from_utf8_lossy(&o.stdout);
    // one summary row per decade
    assert_eq!(stdout.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).count(), 9);
    let membership = fs::read_to_string(out.join("membership.csv")).unwrap();
    let y2050 = membership.lines().find(|l| l.starts_with("2050,")).unwrap();
    assert!(y2050.split(',').skip(2).all(|f| f == "1"), "{y2050}");
}

#[test]
fn min_tau_writes_the_rate_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ONE_TIPPING);
    let out = dir.path().join("o");
    let o = climclub(&["--mode", "min-tau", "--config", &cfg, "--out", out.to_str().unwrap(), "-q"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(out.join("tau_hat.csv")).unwrap();
    assert_eq!(text.lines().count(), 82);
    for line in text.lines().skip(1) {
        let tau: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!(tau > 0.0 && tau < 0.05, "{line}");
    }
}

#[test]
fn solver_failure_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ONE_TIPPING);
    let out = dir.path().join("o");
    let o = climclub(&["--config", &cfg, "--set", "t_domain_max=2.5", "--out", out.to_str().unwrap(), "-q"]);
    assert_eq!(code(&o), 4);
    let rows = fs::read_to_string(out.join("trajectories.csv")).unwrap().lines().count();
    assert!(rows > 2 && rows < 82, "{rows}");
}

#[test]
fn compare_writes_each_run_and_differences() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), ONE_TIPPING);
    let out = dir.path().join("o");
    let o = climclub(&["--mode", "compare", "--compare", "cooperation", "--config", &cfg, "--out", out.to_str().unwrap(), "-q"]);
    assert_eq!(code(&o), 0);
    assert!(out.join("cooperation/trajectories.csv").is_file());
    assert!(out.join("non-cooperation/trajectories.csv").is_file());
    let diff = fs::read_to_string(out.join("differences.csv")).unwrap();
    assert_eq!(diff.lines().count(), 82);
}

const SMALL_GRID: &str = "[one_tipping]\nlosses = [0.04]\nrates = [0.01, 0.05]\nyears = [2050]\nmechanisms = [\"gamma-core\"]\n";

#[test]
fn sweep_output_does_not_depend_on_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(&grid, SMALL_GRID).unwrap();
    let mut trees = Vec::new();
    for jobs in ["1", "2"] {
        let out = dir.path().join(format!("o{jobs}"));
        let o = climclub(&["--mode", "sweep", "--grid", grid.to_str().unwrap(), "--jobs", jobs, "--out", out.to_str().unwrap(), "-q"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let cases: Vec<String> = {
            let mut v: Vec<String> = fs::read_dir(out.join("cases"))
                .unwrap()
                .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect();
            v.sort();
            v
        };
        assert_eq!(cases.len(), 2);
        let mut blob = fs::read_to_string(out.join("summary.csv")).unwrap();
        for c in &cases {
            blob.push_str(&fs::read_to_string(out.join("cases").join(c).join("trajectories.csv")).unwrap());
        }
        trees.push(blob);
    }
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn sweep_isolates_a_failing_case() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(
        &grid,
        "[one_tipping]\nlosses = [0.04]\nrates = [0.01]\nyears = [2050, 2150]\nmechanisms = [\"gamma-core\"]\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = climclub(&["--mode", "sweep", "--grid", grid.to_str().unwrap(), "--jobs", "2", "--out", out.to_str().unwrap(), "-q"]);
    assert_eq!(code(&o), 3);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.contains(",ok,")).count(), 1);
    assert_eq!(summary.lines().filter(|l| l.contains(",failed,")).count(), 1);
    let report = fs::read_to_string(out.join("failures.txt")).unwrap();
    assert!(report.contains("y2150"), "{report}");
    assert!(out.join("cases/1tip_L4_tau1_y2050_gamma-core/trajectories.csv").is_file());
}

#[test]
fn verify_detects_a_perturbed_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    for f in ["regions_rice2010.csv", "reference_emissions.csv"] {
        fs::copy(data_dir().join(f), data.join(f)).unwrap();
    }
    let out = dir.path().join("o");
    let args = ["--mode", "verify", "--criteria", "0", "--out", out.to_str().unwrap()];
    let run = |d: &Path| {
        Command::new(env!("CARGO_BIN_EXE_climclub"))
            .args(args)
            .env("CLIMCLUB_DATA_DIR", d)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run(&data)), 0);
    let table = fs::read_to_string(data.join("regions_rice2010.csv")).unwrap();
    fs::write(data.join("regions_rice2010.csv"), table.replacen("14.13", "14.14", 1)).unwrap();
    let o = run(&data);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report[0]["id"], 0);
    assert_eq!(report[0]["passed"], false);
}

#[test]
fn verify_filtered_to_nothing_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = climclub(&["--mode", "verify", "--criteria", "99", "--out", out.to_str().unwrap(), "-q"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("verify.json")).unwrap().trim(), "[]");
}
