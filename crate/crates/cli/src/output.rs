//! Files written by each mode.

use std::fs;
use std::path::{Path, PathBuf};

use coalition_core::calibration::{write_manifest, write_membership_matrix, write_trajectories, Manifest};
use coalition_core::simulator::{DifferenceSeries, ScenarioConfig, Trajectory};
use coalition_core::{CoreError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}

/// Trajectory, membership matrix and manifest of one run in `dir`.
pub fn write_run(dir: &Path, config: &ScenarioConfig, traj: &Trajectory, with_tau_hat: bool) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut files = vec![dir.join("trajectories.csv"), dir.join("membership.csv")];
    write_trajectories(&traj.records, &traj.names, &files[0])?;
    write_membership_matrix(&traj.records, &traj.names, &files[1])?;
    if with_tau_hat {
        let path = dir.join("tau_hat.csv");
        write_tau_hat(traj, &path)?;
        files.push(path);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        thresholds: traj.thresholds.clone(),
        negative_emission_steps: traj.negative_emission_steps,
        solved_games: traj.solved_games,
        elapsed_seconds: traj.elapsed_seconds,
        files: files.iter().filter_map(|f| f.file_name().map(PathBuf::from)).collect(),
    };
    let path = dir.join("manifest.toml");
    write_manifest(&manifest, &path)?;
    files.push(path);
    Ok(files)
}

fn write_tau_hat(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["year", "temperature", "state", "tau_hat", "tau_bar", "size"])?;
    for r in &traj.records {
        w.write_record([
            r.year.to_string(),
            r.temperature.to_string(),
            r.state.to_string(),
            r.tau_hat.map(|x| x.to_string()).unwrap_or_default(),
            r.tau_bar.to_string(),
            r.size.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn write_differences(series: &[DifferenceSeries], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "year", "total_value", "temperature", "size"])?;
    for s in series {
        for i in 0..s.years.len() {
            w.write_record([
                s.label.clone(),
                s.years[i].to_string(),
                s.total_value[i].to_string(),
                s.temperature[i].to_string(),
                s.size[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Years at which membership changes, with the regions that join (+) or leave (−).
pub fn membership_events(traj: &Trajectory) -> Vec<(f64, String)> {
    traj.records
        .windows(2)
        .filter(|w| w[0].mask != w[1].mask)
        .map(|w| {
            let (before, after) = (w[0].mask, w[1].mask);
            let mut parts = Vec::new();
            for (i, name) in traj.names.iter().enumerate() {
                match (before >> i & 1, after >> i & 1) {
                    (0, 1) => parts.push(format!("+{name}")),
                    (1, 0) => parts.push(format!("-{name}")),
                    _ => {}
                }
            }
            (w[1].year, parts.join(" "))
        })
        .collect()
}

/// One line per decade (and the last step) of a run.
pub fn print_summary(label: &str, traj: &Trajectory) {
    println!("{label}");
    println!("  {:>6} {:>8} {:>5} {:>4} {:>9}  members", "year", "T", "state", "size", "rate");
    let last = traj.records.len().saturating_sub(1);
    for (k, r) in traj.records.iter().enumerate() {
        if (r.year.round() as i64) % 10 != 0 && k != last {
            continue;
        }
        let rate = r.tau_hat.unwrap_or(r.tau);
        println!(
            "  {:>6} {:>8.4} {:>5} {:>4} {:>9.5}  {}",
            r.year, r.temperature, r.state, r.size, rate, r.members
        );
    }
}
