use std::fs;
use std::path::Path;

use coalition_core::calibration::{build_case_grid, CaseGridSpec};
use coalition_core::simulator::{run_comparison, Scenario, ScenarioConfig, Trajectory};
use coalition_core::CoreError;
use coalition_verify::{known_red, Context};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{ensure_dir, membership_events, print_summary, write_differences, write_run};
use crate::{existing, exit, overrides, Args, Failure, Mode};

fn load_config(args: &Args) -> Result<ScenarioConfig, Failure> {
    let text = match &args.config {
        Some(path) => {
            existing(path, "configuration")?;
            fs::read_to_string(path).map_err(|e| Failure::from(CoreError::io(path, e)))?
        }
        None if matches!(args.mode, Mode::Sweep) => String::new(),
        None => return Err(Failure::usage("--config is required for this mode")),
    };
    overrides::apply(&text, &args.overrides)
}

fn load_scenario(args: &Args) -> Result<Scenario, Failure> {
    let config = load_config(args)?;
    Ok(Scenario::load(config, &args.data_dir())?)
}

/// Write what was simulated, then report the error that stopped the run.
fn finish(args: &Args, scenario: &Scenario, traj: &Trajectory, err: Option<CoreError>, tau_hat: bool) -> Result<u8, Failure> {
    let files = write_run(&args.out, &scenario.config, traj, tau_hat)?;
    if !args.quiet {
        print_summary(&scenario.config.name, traj);
        for f in &files {
            println!("wrote {}", f.display());
        }
    }
    match err {
        Some(e) => Err(e.into()),
        None => Ok(exit::OK),
    }
}

pub fn scenario(args: &Args) -> Result<u8, Failure> {
    let scenario = load_scenario(args)?;
    let (traj, err) = scenario.run_partial();
    finish(args, &scenario, &traj, err, false)
}

pub fn min_tau(args: &Args) -> Result<u8, Failure> {
    let base = load_scenario(args)?;
    let mut cfg = base.config.clone();
    cfg.dynamic_rate = true;
    let scenario = base.with_config(cfg)?;
    let (traj, err) = scenario.run_partial();
    finish(args, &scenario, &traj, err, true)
}

pub fn compare(args: &Args) -> Result<u8, Failure> {
    let scenario = load_scenario(args)?;
    let cmp = run_comparison(&scenario, args.compare.into())?;
    ensure_dir(&args.out)?;
    for ((label, run), (_, cfg)) in cmp
        .labels
        .iter()
        .zip(&cmp.runs)
        .zip(coalition_core::simulator::comparison_variants(&scenario, cmp.kind))
    {
        write_run(&args.out.join(label), &cfg, run, false)?;
        if !args.quiet {
            print_summary(label, run);
        }
    }
    let path = args.out.join("differences.csv");
    write_differences(&cmp.differences, &path)?;
    if !args.quiet {
        println!("wrote {} runs and {}", cmp.runs.len(), path.display());
    }
    Ok(exit::OK)
}

#[derive(Debug, Serialize)]
struct CaseRow {
    id: String,
    status: &'static str,
    steps: usize,
    final_size: Option<usize>,
    final_temperature: Option<f64>,
    event_years: String,
    events: String,
    error: String,
}

fn run_case(base: &Scenario, id: &str, config: ScenarioConfig, dir: &Path) -> (CaseRow, Option<u8>) {
    let mut row = CaseRow {
        id: id.to_string(),
        status: "ok",
        steps: 0,
        final_size: None,
        final_temperature: None,
        event_years: String::new(),
        events: String::new(),
        error: String::new(),
    };
    let outcome = base.with_config(config).and_then(|s| {
        let (traj, err) = s.run_partial();
        write_run(dir, &s.config, &traj, false)?;
        Ok((traj, err))
    });
    let err = match outcome {
        Ok((traj, err)) => {
            let events = membership_events(&traj);
            row.steps = traj.records.len();
            row.final_size = traj.records.last().map(|r| r.size);
            row.final_temperature = traj.records.last().map(|r| r.temperature);
            row.event_years = events.iter().map(|(y, _)| y.to_string()).collect::<Vec<_>>().join(";");
            row.events = events.iter().map(|(y, e)| format!("{y}: {e}")).collect::<Vec<_>>().join("; ");
            err
        }
        Err(e) => Some(e),
    };
    match err {
        None => (row, None),
        Some(e) => {
            let f = Failure::from(e);
            row.status = "failed";
            row.error = f.message;
            (row, Some(f.code))
        }
    }
}

pub fn sweep(args: &Args) -> Result<u8, Failure> {
    let spec = match &args.grid {
        Some(path) => {
            existing(path, "case grid")?;
            CaseGridSpec::load(path)?
        }
        None => CaseGridSpec::standard(),
    };
    let base = load_scenario(args)?;
    let cases = build_case_grid(&spec, &base.config)?;
    let case_root = args.out.join("cases");
    ensure_dir(&case_root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs as usize)
        .build()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    let results: Vec<(CaseRow, Option<u8>)> = pool.install(|| {
        cases
            .par_iter()
            .map(|c| run_case(&base, &c.id, c.config.clone(), &case_root.join(&c.id)))
            .collect()
    });

    let summary = args.out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary).map_err(CoreError::from)?;
    for (row, _) in &results {
        w.serialize(row).map_err(CoreError::from)?;
    }
    w.flush().map_err(|e| CoreError::io(&summary, e))?;

    let failed: Vec<&CaseRow> = results.iter().filter(|(_, c)| c.is_some()).map(|(r, _)| r).collect();
    if !failed.is_empty() {
        let report = args.out.join("failures.txt");
        let text: String = failed.iter().map(|r| format!("{}: {}\n", r.id, r.error)).collect();
        fs::write(&report, text).map_err(|e| CoreError::io(&report, e))?;
    }
    if !args.quiet {
        println!("{:<40} {:>6} {:>5} {:>8}  membership events", "case", "status", "size", "T_end");
        for (r, _) in &results {
            println!(
                "{:<40} {:>6} {:>5} {:>8}  {}",
                r.id,
                r.status,
                r.final_size.map(|s| s.to_string()).unwrap_or_default(),
                r.final_temperature.map(|t| format!("{t:.4}")).unwrap_or_default(),
                if r.error.is_empty() { &r.events } else { &r.error }
            );
        }
        println!("{} cases, {} completed, {} failed", results.len(), results.len() - failed.len(), failed.len());
    }
    Ok(results.iter().filter_map(|(_, c)| *c).max().unwrap_or(exit::OK))
}

#[derive(Debug, Serialize)]
struct VerifyEntry<'a> {
    #[serde(flatten)]
    outcome: &'a coalition_verify::Outcome,
    known_red: Option<&'static str>,
}

pub fn verify(args: &Args) -> Result<u8, Failure> {
    if args.config.is_some() || !args.overrides.is_empty() {
        return Err(Failure::usage("verify mode takes no --config or --set"));
    }
    let ctx = Context::load(&args.data_dir())?;
    let outcomes = coalition_verify::run(&ctx, |id| args.criteria.as_ref().is_none_or(|c| c.contains(&id)));
    let entries: Vec<VerifyEntry> = outcomes
        .iter()
        .map(|o| VerifyEntry {
            outcome: o,
            known_red: known_red(o.id),
        })
        .collect();
    ensure_dir(&args.out)?;
    let path = args.out.join("verify.json");
    let text = serde_json::to_string_pretty(&entries).expect("outcomes serialize");
    fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
    for o in &outcomes {
        println!("{o}");
    }
    let unexpected = outcomes.iter().filter(|o| o.is_unexpected()).count();
    if !args.quiet {
        println!(
            "{}/{} passed, {unexpected} unexpected; report in {}",
            outcomes.iter().filter(|o| o.passed).count(),
            outcomes.len(),
            path.display()
        );
    }
    Ok(if unexpected == 0 { exit::OK } else { exit::CHECKS_FAILED })
}
