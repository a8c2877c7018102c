//! Region tables, case grids and result files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::Mechanism;
use crate::error::{CoreError, Result};
use crate::simulator::{ScenarioConfig, TippingEvent, TrajectoryRecord};
use crate::types::RegionParams;

pub const REGION_HEADER: [&str; 6] = ["name", "alpha", "beta", "epsilon", "rho", "eta"];
pub const REFERENCE_HEADER: [&str; 2] = ["name", "q_ref"];

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    if text.trim().is_empty() {
        return Err(CoreError::Schema {
            path: path.to_path_buf(),
            msg: "file is empty".into(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| CoreError::Schema {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    if found != header {
        return Err(CoreError::Schema {
            path: path.to_path_buf(),
            msg: format!("expected header {:?}, found {:?}", header, found),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CoreError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(rows)
}

fn parse_field(path: &Path, line: usize, record: &csv::StringRecord, idx: usize, col: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CoreError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("column {col}: cannot parse {raw:?} as a number"),
        })
}

/// Read a region table with header `name,alpha,beta,epsilon,rho,eta`.
pub fn load_regions(path: impl AsRef<Path>) -> Result<Vec<(String, RegionParams)>> {
    let path = path.as_ref();
    let rows = read_table(path, &REGION_HEADER)?;
    if rows.is_empty() {
        return Err(CoreError::Schema {
            path: path.to_path_buf(),
            msg: "no region rows".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, record) in rows {
        let name = record.get(0).unwrap_or("").to_string();
        if name.is_empty() {
            return Err(CoreError::Parse {
                path: path.to_path_buf(),
                line,
                msg: "empty region name".into(),
            });
        }
        if !seen.insert(name.clone()) {
            return Err(CoreError::Validation(format!(
                "{}:{line}: duplicated region {name}",
                path.display()
            )));
        }
        let mut v = [0.0; 5];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_field(path, line, &record, k + 1, REGION_HEADER[k + 1])?;
        }
        let params = RegionParams::new(v[0], v[1], v[2], v[3], v[4]);
        params.validate().map_err(|e| {
            CoreError::Validation(format!("{}:{line}: region {name}: {e}", path.display()))
        })?;
        out.push((name, params));
    }
    Ok(out)
}

/// Reference emission level per region, in the order of `names`.
pub fn load_reference_emissions(path: impl AsRef<Path>, names: &[String]) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let rows = read_table(path, &REFERENCE_HEADER)?;
    let mut table = std::collections::HashMap::new();
    for (line, record) in rows {
        let name = record.get(0).unwrap_or("").to_string();
        let q = parse_field(path, line, &record, 1, "q_ref")?;
        if table.insert(name.clone(), q).is_some() {
            return Err(CoreError::Validation(format!(
                "{}:{line}: duplicated region {name}",
                path.display()
            )));
        }
    }
    names
        .iter()
        .map(|n| {
            table.get(n).copied().ok_or_else(|| {
                CoreError::Validation(format!("{}: no reference emission for {n}", path.display()))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneTippingGrid {
    pub losses: Vec<f64>,
    pub rates: Vec<f64>,
    pub years: Vec<i32>,
    pub mechanisms: Vec<Mechanism>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTippingGrid {
    pub loss_pairs: Vec<[f64; 2]>,
    pub rates: Vec<f64>,
    pub year_pairs: Vec<[i32; 2]>,
    pub mechanisms: Vec<Mechanism>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CaseGridSpec {
    pub one_tipping: Option<OneTippingGrid>,
    pub two_tipping: Option<TwoTippingGrid>,
}

impl CaseGridSpec {
    /// The standard case settings: 54 one-tipping and 36 two-tipping cases.
    pub fn standard() -> Self {
        let mechanisms = vec![Mechanism::Shapley, Mechanism::GammaCore];
        let rates = vec![0.01, 0.05, 0.10];
        CaseGridSpec {
            one_tipping: Some(OneTippingGrid {
                losses: vec![0.01, 0.04, 0.08],
                rates: rates.clone(),
                years: vec![2030, 2050, 2070],
                mechanisms: mechanisms.clone(),
            }),
            two_tipping: Some(TwoTippingGrid {
                loss_pairs: vec![[0.01, 0.02], [0.02, 0.04], [0.04, 0.08]],
                rates,
                year_pairs: vec![[2030, 2050], [2050, 2070]],
                mechanisms,
            }),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CoreError::Schema {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

/// One configured run of the case grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub config: ScenarioConfig,
}

/// Percent label without trailing zeros: 0.04 → "4", 0.015 → "1.5".
pub fn pct_label(x: f64) -> String {
    let s = format!("{:.6}", x * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn check_rate(x: f64, what: &str) -> Result<()> {
    if (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(CoreError::Validation(format!("{what} {x} outside [0, 1)")))
    }
}

/// Cartesian product of the grid over `base` (which supplies every other setting).
pub fn build_case_grid(spec: &CaseGridSpec, base: &ScenarioConfig) -> Result<Vec<Case>> {
    let chi = base.tipping.first().map(|e| e.chi).unwrap_or(crate::simulator::DEFAULT_CHI);
    let mut cases = Vec::new();
    if let Some(g) = &spec.one_tipping {
        for &loss in &g.losses {
            check_rate(loss, "loss")?;
            for &rate in &g.rates {
                check_rate(rate, "rate")?;
                for &year in &g.years {
                    for &mechanism in &g.mechanisms {
                        let mut config = base.clone();
                        config.rate = rate;
                        config.mechanism = mechanism;
                        config.tipping = vec![TippingEvent::new(year, loss, chi)];
                        let id = format!(
                            "1tip_L{}_tau{}_y{year}_{mechanism}",
                            pct_label(loss),
                            pct_label(rate)
                        );
                        config.name = id.clone();
                        cases.push(Case { id, config });
                    }
                }
            }
        }
    }
    if let Some(g) = &spec.two_tipping {
        for pair in &g.loss_pairs {
            check_rate(pair[0], "loss")?;
            check_rate(pair[1], "loss")?;
            if pair[1] < pair[0] {
                return Err(CoreError::Validation(format!(
                    "second loss {} below first loss {}",
                    pair[1], pair[0]
                )));
            }
            for &rate in &g.rates {
                check_rate(rate, "rate")?;
                for years in &g.year_pairs {
                    if years[1] <= years[0] {
                        return Err(CoreError::Validation(format!(
                            "tipping years {years:?} not increasing"
                        )));
                    }
                    for &mechanism in &g.mechanisms {
                        let mut config = base.clone();
                        config.rate = rate;
                        config.mechanism = mechanism;
                        config.tipping = vec![
                            TippingEvent::new(years[0], pair[0], chi),
                            TippingEvent::new(years[1], pair[1], chi),
                        ];
                        let id = format!(
                            "2tip_L{}-{}_tau{}_y{}-{}_{mechanism}",
                            pct_label(pair[0]),
                            pct_label(pair[1]),
                            pct_label(rate),
                            years[0],
                            years[1]
                        );
                        config.name = id.clone();
                        cases.push(Case { id, config });
                    }
                }
            }
        }
    }
    Ok(cases)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        }
    }
    Ok(())
}

fn trajectory_header(names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = [
        "year",
        "temperature",
        "state",
        "mask",
        "members",
        "size",
        "tau_bar",
        "tau",
        "tau_hat",
        "collective_value",
        "total_value",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["q", "flow", "value"] {
        h.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    h
}

/// One row per record; floats use the shortest round-trip representation.
pub fn write_trajectories(records: &[TrajectoryRecord], names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(names))?;
    for r in records {
        let mut row = vec![
            r.year.to_string(),
            r.temperature.to_string(),
            r.state.to_string(),
            r.mask.to_string(),
            r.members.clone(),
            r.size.to_string(),
            r.tau_bar.to_string(),
            r.tau.to_string(),
            r.tau_hat.map(|v| v.to_string()).unwrap_or_default(),
            r.collective_value.to_string(),
            r.total_value.to_string(),
        ];
        for series in [&r.emissions, &r.flows, &r.values] {
            row.extend(series.iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

/// Inverse of [`write_trajectories`]; returns region names and records.
pub fn read_trajectories(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<TrajectoryRecord>)> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let fixed = 11;
    if header.len() < fixed || (header.len() - fixed) % 3 != 0 {
        return Err(CoreError::Schema {
            path: path.to_path_buf(),
            msg: "unexpected trajectory header".into(),
        });
    }
    let n = (header.len() - fixed) / 3;
    let names: Vec<String> = header[fixed..fixed + n]
        .iter()
        .map(|h| h.trim_start_matches("q_").to_string())
        .collect();
    if trajectory_header(&names) != header {
        return Err(CoreError::Schema {
            path: path.to_path_buf(),
            msg: "unexpected trajectory header".into(),
        });
    }
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |col: &str| CoreError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("bad value in column {col}"),
        };
        let num = |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(|_| bad(&header[i])) };
        let int = |i: usize| -> Result<u64> { rec[i].parse::<u64>().map_err(|_| bad(&header[i])) };
        let series = |k: usize| -> Result<Vec<f64>> {
            (0..n).map(|j| num(fixed + k * n + j)).collect()
        };
        records.push(TrajectoryRecord {
            year: num(0)?,
            temperature: num(1)?,
            state: int(2)? as usize,
            mask: int(3)?,
            members: rec[4].to_string(),
            size: int(5)? as usize,
            tau_bar: num(6)?,
            tau: num(7)?,
            tau_hat: if rec[8].is_empty() { None } else { Some(num(8)?) },
            collective_value: num(9)?,
            total_value: num(10)?,
            emissions: series(0)?,
            flows: series(1)?,
            values: series(2)?,
        });
    }
    Ok((names, records))
}

/// Years × regions membership grid (1 member, 0 not) with temperature.
pub fn write_membership_matrix(records: &[TrajectoryRecord], names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["year".to_string(), "temperature".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.year.to_string(), r.temperature.to_string()];
        row.extend((0..names.len()).map(|i| ((r.mask >> i) & 1).to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))?;
    Ok(())
}

/// Run manifest: configuration echo, code version, thresholds and timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ScenarioConfig,
    pub thresholds: Vec<f64>,
    pub negative_emission_steps: usize,
    pub solved_games: usize,
    pub elapsed_seconds: f64,
    pub files: Vec<PathBuf>,
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let text = toml::to_string(manifest).map_err(|e| CoreError::Schema {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn shipped() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/regions_rice2010.csv")
    }

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn shipped_table() {
        let rows = load_regions(shipped()).unwrap();
        assert_eq!(rows.len(), 12);
        let (name, india) = &rows[5];
        assert_eq!(name, "India");
        assert_eq!((india.alpha, india.beta, india.epsilon, india.rho, india.eta), (4.90, 1.96, 0.0, 0.662, -0.412));
        let china = &rows[0].1;
        assert_eq!((china.alpha, china.beta, china.rho, china.eta), (14.13, 8.02, 0.254, -0.152));
        assert!(rows.iter().all(|(_, p)| p.epsilon == 0.0));
    }

    #[test]
    fn malformed_inputs() {
        let empty = temp_file("");
        assert!(matches!(load_regions(empty.path()), Err(CoreError::Schema { .. })));

        let dup = temp_file("name,alpha,beta,epsilon,rho,eta\nA,1,1,0,1,0\nA,1,1,0,1,0\n");
        assert!(matches!(load_regions(dup.path()), Err(CoreError::Validation(_))));

        let beta = temp_file("name,alpha,beta,epsilon,rho,eta\nA,1,0,0,1,0\n");
        assert!(matches!(load_regions(beta.path()), Err(CoreError::Validation(_))));

        let junk = temp_file("name,alpha,beta,epsilon,rho,eta\nA,1,1,0,1,0\nB,1,x,0,1,0\n");
        match load_regions(junk.path()) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let header = temp_file("name,a,b\nA,1,1\n");
        assert!(matches!(load_regions(header.path()), Err(CoreError::Schema { .. })));
    }

    #[test]
    fn reference_emissions_follow_names() {
        let f = temp_file("name,q_ref\nB,2.5\nA,1.5\n");
        let q = load_reference_emissions(f.path(), &["A".into(), "B".into()]).unwrap();
        assert_eq!(q, vec![1.5, 2.5]);
        assert!(load_reference_emissions(f.path(), &["C".into()]).is_err());
    }

    #[test]
    fn grid_counts() {
        let base = ScenarioConfig::default();
        let all = build_case_grid(&CaseGridSpec::standard(), &base).unwrap();
        assert_eq!(all.len(), 90);
        let ids: HashSet<_> = all.iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids.len(), 90);

        let single = CaseGridSpec {
            one_tipping: Some(OneTippingGrid {
                losses: vec![0.04],
                rates: vec![0.01],
                years: vec![2050],
                mechanisms: vec![Mechanism::GammaCore],
            }),
            two_tipping: None,
        };
        let one = build_case_grid(&single, &base).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].id, "1tip_L4_tau1_y2050_gamma-core");

        let mut bad = CaseGridSpec::standard();
        bad.two_tipping.as_mut().unwrap().loss_pairs = vec![[0.04, 0.02]];
        assert!(matches!(build_case_grid(&bad, &base), Err(CoreError::Validation(_))));
    }

    #[test]
    fn empty_records_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectories(&[], &["A".into()], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (names, recs) = read_trajectories(&p).unwrap();
        assert_eq!(names, vec!["A".to_string()]);
        assert!(recs.is_empty());
    }

    #[test]
    fn pct_labels() {
        assert_eq!(pct_label(0.04), "4");
        assert_eq!(pct_label(0.10), "10");
        assert_eq!(pct_label(0.015), "1.5");
    }
}
