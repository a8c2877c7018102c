//! Forward simulation of the temperature-emission loop with coalition
//! re-formation at every step and scheduled tipping realizations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocation::Mechanism;
use crate::analytic::{solve_post_tipping, StageSpec};
use crate::calibration::{load_reference_emissions, load_regions};
use crate::collocation::SolverOptions;
use crate::error::{CoreError, Result};
use crate::stability::{
    best_internally_stable, check_stability, min_tau, stable_coalitions, GameCache, LazyValues,
    StabilityReport, StructureValues, ValueTable,
};
use crate::types::{flow_payoff, CoalitionMask, IncentiveMode, ModelParams, RegionParams};

pub const DEFAULT_CHI: f64 = 0.0035;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TippingEvent {
    /// Year the event realizes.
    pub year: i32,
    /// Loss flow as a fraction of each region's reference benefit.
    pub loss_pct: f64,
    #[serde(default = "default_chi")]
    pub chi: f64,
    /// Explicit hazard threshold (°C); overrides the threshold rule.
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_chi() -> f64 {
    DEFAULT_CHI
}

impl TippingEvent {
    pub fn new(year: i32, loss_pct: f64, chi: f64) -> Self {
        TippingEvent {
            year,
            loss_pct,
            chi,
            threshold: None,
        }
    }
}

/// Which coalition is in force at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoalitionPolicy {
    /// Stable coalition with the largest aggregate benefit.
    #[default]
    Endogenous,
    /// Every region in one coalition.
    Grand,
    /// No coalition.
    NonCooperative,
}

/// How hazard thresholds are derived from realization years when not given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Temperature of the non-cooperative, tipping-free path in the realization year.
    #[default]
    Baseline,
    /// Temperature of the full-cooperation, tipping-free path in the realization year.
    CooperativeBaseline,
    /// The initial temperature: hazard is live from the first step.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub start_year: i32,
    pub end_year: i32,
    pub dt: f64,
    pub t0: f64,
    /// Region table; relative paths resolve against the data directory.
    pub regions: PathBuf,
    /// Reference emissions per region; `None` uses each region's α/β.
    pub reference_emissions: Option<PathBuf>,
    pub r: f64,
    pub lambda: f64,
    pub t_domain_max: f64,
    pub cheb_degree: usize,
    pub incentive: IncentiveMode,
    /// Grand-coalition sharing (or sanction) rate.
    pub rate: f64,
    /// Use the minimum gap-closing rate at every step instead of `rate`.
    pub dynamic_rate: bool,
    pub mechanism: Mechanism,
    pub coalition: CoalitionPolicy,
    pub tipping: Vec<TippingEvent>,
    pub threshold_rule: ThresholdRule,
    pub tau_step: f64,
    pub tau_ceiling: f64,
    /// Value Shapley subsets at the parent coalition's rate.
    pub shapley_parent_rate: bool,
    pub boundary_tolerance: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            start_year: 2020,
            end_year: 2100,
            dt: 1.0,
            t0: 1.0,
            regions: PathBuf::from("regions_rice2010.csv"),
            reference_emissions: Some(PathBuf::from("reference_emissions.csv")),
            r: 0.025,
            lambda: 0.0021,
            t_domain_max: 6.0,
            cheb_degree: 4,
            incentive: IncentiveMode::TechSharing,
            rate: 0.01,
            dynamic_rate: false,
            mechanism: Mechanism::GammaCore,
            coalition: CoalitionPolicy::Endogenous,
            tipping: Vec::new(),
            threshold_rule: ThresholdRule::Baseline,
            tau_step: 1e-4,
            tau_ceiling: 0.5,
            shapley_parent_rate: false,
            boundary_tolerance: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        ScenarioConfig::from_toml(&text).map_err(|e| CoreError::Schema {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn steps(&self) -> usize {
        ((self.end_year - self.start_year) as f64 / self.dt).round() as usize
    }

    pub fn year_at(&self, step: usize) -> f64 {
        self.start_year as f64 + step as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Validation(m));
        if !(self.dt > 0.0) {
            return fail(format!("dt must be > 0, got {}", self.dt));
        }
        if self.end_year <= self.start_year {
            return fail("end_year must follow start_year".into());
        }
        let span = (self.end_year - self.start_year) as f64;
        if (self.steps() as f64 * self.dt - span).abs() > 1e-9 {
            return fail(format!("dt {} does not divide the horizon", self.dt));
        }
        if !(self.t0 >= 0.0 && self.t0 < self.t_domain_max) {
            return fail(format!("t0 {} outside [0, {})", self.t0, self.t_domain_max));
        }
        if !(0.0..1.0).contains(&self.rate) {
            return fail(format!("rate {} outside [0, 1)", self.rate));
        }
        if self.tipping.len() > 2 {
            return fail("at most two tipping events are supported".into());
        }
        for w in self.tipping.windows(2) {
            if w[1].year <= w[0].year {
                return fail("tipping years must be strictly increasing".into());
            }
            if w[1].loss_pct < w[0].loss_pct {
                return fail("tipping losses must be nondecreasing".into());
            }
        }
        for e in &self.tipping {
            if e.year <= self.start_year || e.year > self.end_year {
                return fail(format!("tipping year {} outside the horizon", e.year));
            }
            if !(0.0..1.0).contains(&e.loss_pct) {
                return fail(format!("loss {} outside [0, 1)", e.loss_pct));
            }
            if !(e.chi >= 0.0) {
                return fail(format!("chi {} must be >= 0", e.chi));
            }
        }
        if !(self.tau_step > 0.0) || !(self.tau_ceiling < 1.0) || self.tau_ceiling < self.tau_step {
            return fail("need 0 < tau_step <= tau_ceiling < 1".into());
        }
        Ok(())
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            boundary_tolerance: self.boundary_tolerance,
            ..SolverOptions::default()
        }
    }
}

/// One simulated year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub year: f64,
    pub temperature: f64,
    /// Realized tipping events.
    pub state: usize,
    /// Member bits of the coalition in force.
    pub mask: u64,
    pub members: String,
    pub size: usize,
    /// Grand-coalition rate in force.
    pub tau_bar: f64,
    /// Rate applied to the coalition in force.
    pub tau: f64,
    pub tau_hat: Option<f64>,
    /// V of the coalition in force (0 without one).
    pub collective_value: f64,
    /// Sum of every player's value.
    pub total_value: f64,
    pub emissions: Vec<f64>,
    /// Net flow benefit per region.
    pub flows: Vec<f64>,
    /// Allocated value for members, own value for outsiders.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub names: Vec<String>,
    pub thresholds: Vec<f64>,
    pub records: Vec<TrajectoryRecord>,
    /// Internally stable two-member coalition with the largest aggregate
    /// benefit per step (endogenous runs only).
    pub pair_selection: Vec<Option<u64>>,
    pub negative_emission_steps: usize,
    pub solved_games: usize,
    pub elapsed_seconds: f64,
}

/// Regions, reference emissions and configuration of one run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub names: Vec<String>,
    pub regions: Vec<RegionParams>,
    pub reference: Vec<f64>,
}

fn resolve(path: &Path, data_dir: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        data_dir.join(path)
    }
}

impl Scenario {
    /// Read the files named by `config`, resolving relative paths against `data_dir`.
    pub fn load(config: ScenarioConfig, data_dir: &Path) -> Result<Self> {
        config.validate()?;
        let rows = load_regions(resolve(&config.regions, data_dir))?;
        let (names, regions): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let reference = match &config.reference_emissions {
            Some(p) => load_reference_emissions(resolve(p, data_dir), &names)?,
            None => regions.iter().map(RegionParams::private_optimum).collect(),
        };
        Scenario::from_parts(config, names, regions, reference)
    }

    pub fn from_parts(
        config: ScenarioConfig,
        names: Vec<String>,
        regions: Vec<RegionParams>,
        reference: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if names.len() != regions.len() || reference.len() != regions.len() {
            return Err(CoreError::Validation(
                "names, regions and reference emissions differ in length".into(),
            ));
        }
        Ok(Scenario {
            config,
            names,
            regions,
            reference,
        })
    }

    pub fn with_config(&self, config: ScenarioConfig) -> Result<Self> {
        Scenario::from_parts(config, self.names.clone(), self.regions.clone(), self.reference.clone())
    }

    /// θ_i at the reference emissions.
    pub fn reference_benefits(&self) -> Vec<f64> {
        self.regions
            .iter()
            .zip(&self.reference)
            .map(|(p, &q)| p.benefit(q))
            .collect()
    }

    fn params_with(&self, thresholds: &[f64]) -> ModelParams {
        let benefits = self.reference_benefits();
        let regions = self
            .regions
            .iter()
            .zip(&benefits)
            .map(|(p, b)| {
                let loss = self.config.tipping.iter().map(|e| e.loss_pct * b).collect();
                p.clone().with_losses(loss)
            })
            .collect();
        let mut params = ModelParams::new(self.names.clone(), regions);
        params.r = self.config.r;
        params.lambda = self.config.lambda;
        params.t_domain_max = self.config.t_domain_max;
        params.cheb_degree = self.config.cheb_degree;
        params.tau_bar = self.config.rate;
        params.incentive_mode = self.config.incentive;
        params.t0_benefits = benefits;
        params.chi = self.config.tipping.iter().map(|e| e.chi).collect();
        params.t_bar = thresholds.to_vec();
        params
    }

    /// Model parameters with thresholds resolved.
    pub fn model_params(&self) -> Result<ModelParams> {
        let thresholds = self.thresholds()?;
        let params = self.params_with(&thresholds);
        params.validate()?;
        Ok(params)
    }

    /// Temperature path of a fixed structure without any tipping event.
    pub fn reference_path(&self, bits: u64) -> Result<Vec<f64>> {
        let mut cfg = self.config.clone();
        cfg.tipping.clear();
        let plain = self.with_config(cfg)?;
        let params = plain.params_with(&[]);
        params.validate()?;
        let mask = CoalitionMask::from_bits(params.n(), bits);
        let spec = StageSpec::for_coalition(&params, &mask, 0)?;
        let game = solve_post_tipping(&mask, spec, &params)?;
        let mut t = self.config.t0;
        let mut path = Vec::with_capacity(self.config.steps() + 1);
        for _ in 0..=self.config.steps() {
            path.push(t);
            let total: f64 = (0..params.n())
                .map(|i| crate::analytic::optimal_emission(i, &game, t, &params))
                .sum();
            t += self.config.dt * params.lambda * total;
        }
        Ok(path)
    }

    /// Hazard threshold of every configured event.
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        let needs_path = self.config.tipping.iter().any(|e| e.threshold.is_none());
        let path = match (needs_path, self.config.threshold_rule) {
            (false, _) | (true, ThresholdRule::Initial) => None,
            (true, ThresholdRule::Baseline) => Some(self.reference_path(0)?),
            (true, ThresholdRule::CooperativeBaseline) => {
                let n = self.regions.len();
                Some(self.reference_path((1u64 << n) - 1)?)
            }
        };
        let mut out = Vec::with_capacity(self.config.tipping.len());
        for e in &self.config.tipping {
            let t = match (e.threshold, &path) {
                (Some(t), _) => t,
                (None, Some(path)) => {
                    let x = (e.year - self.config.start_year) as f64 / self.config.dt;
                    let k = (x.floor() as usize).min(path.len() - 1);
                    let frac = x - k as f64;
                    if k + 1 < path.len() {
                        path[k] + frac * (path[k + 1] - path[k])
                    } else {
                        path[k]
                    }
                }
                (None, None) => self.config.t0,
            };
            out.push(t);
        }
        // a later event's threshold never undercuts an earlier one
        for k in 1..out.len() {
            out[k] = out[k].max(out[k - 1]);
        }
        Ok(out)
    }

    pub fn run(&self) -> Result<Trajectory> {
        match self.run_partial() {
            (traj, None) => Ok(traj),
            (_, Some(e)) => Err(e),
        }
    }

    /// Run as far as possible; on failure return the steps completed so far and the error.
    pub fn run_partial(&self) -> (Trajectory, Option<CoreError>) {
        let started = Instant::now();
        let mut traj = Trajectory {
            names: self.names.clone(),
            thresholds: Vec::new(),
            records: Vec::new(),
            pair_selection: Vec::new(),
            negative_emission_steps: 0,
            solved_games: 0,
            elapsed_seconds: 0.0,
        };
        let setup = self.model_params().and_then(|p| {
            let thresholds = p.t_bar.clone();
            GameCache::with_options(p, self.config.solver_options()).map(|c| (c, thresholds))
        });
        let (cache, thresholds) = match setup {
            Ok(v) => v,
            Err(e) => return (traj, Some(e)),
        };
        traj.thresholds = thresholds;
        let err = self.simulate(&cache, &mut traj).err();
        traj.solved_games = cache.len();
        traj.elapsed_seconds = started.elapsed().as_secs_f64();
        (traj, err)
    }

    fn occurred_at(&self, year: f64) -> usize {
        self.config
            .tipping
            .iter()
            .filter(|e| e.year as f64 <= year + 1e-9)
            .count()
    }

    fn simulate(&self, cache: &GameCache, traj: &mut Trajectory) -> Result<()> {
        let params = cache.params().clone();
        let n = params.n();
        let grand = (1u64 << n) - 1;
        let mut t = self.config.t0;
        for step in 0..=self.config.steps() {
            let year = self.config.year_at(step);
            let wrap = |e: CoreError| CoreError::Simulation {
                step,
                year,
                source: Box::new(e),
            };
            if !(t >= 0.0 && t <= params.t_domain_max) {
                return Err(wrap(CoreError::DomainExceeded {
                    t,
                    t_max: params.t_domain_max,
                }));
            }
            let occurred = self.occurred_at(year);
            let decision = self.decide(cache, occurred, t, grand).map_err(wrap)?;
            let game = cache.game_at(decision.bits, decision.tau_bar).map_err(wrap)?;
            let emissions = game.emissions(occurred, t, &params).map_err(wrap)?;
            if emissions.iter().any(|&q| q < 0.0) {
                traj.negative_emission_steps += 1;
            }
            let spec = game.stages[occurred].spec;
            let mut values = vec![0.0; n];
            for (i, slot) in values.iter_mut().enumerate() {
                if decision.bits >> i & 1 == 0 || decision.bits.count_ones() < 2 {
                    *slot = game.outsider_value(i, occurred, t).map_err(wrap)?;
                }
            }
            for &(i, v) in &decision.allocation {
                values[i] = v;
            }
            let flows: Vec<f64> = (0..n)
                .map(|i| {
                    let p = &params.regions[i];
                    let scale = spec.scale(decision.bits >> i & 1 == 1 && decision.bits.count_ones() >= 2);
                    flow_payoff(emissions[i], t, p, scale, p.realized_loss(occurred))
                })
                .collect();
            let mask = CoalitionMask::from_bits(n, decision.bits);
            traj.records.push(TrajectoryRecord {
                year,
                temperature: t,
                state: occurred,
                mask: decision.bits,
                members: mask.label(&params.names),
                size: decision.bits.count_ones() as usize,
                tau_bar: decision.tau_bar,
                tau: game.rate,
                tau_hat: decision.tau_hat,
                collective_value: game.coalition_value(occurred, t).map_err(wrap)?.unwrap_or(0.0),
                total_value: game.total_value(occurred, t).map_err(wrap)?,
                emissions: emissions.clone(),
                flows,
                values,
            });
            traj.pair_selection.push(decision.best_pair);
            if step < self.config.steps() {
                t += self.config.dt * params.lambda * emissions.iter().sum::<f64>();
            }
        }
        Ok(())
    }

    fn decide(&self, cache: &GameCache, occurred: usize, t: f64, grand: u64) -> Result<Decision> {
        let cfg = &self.config;
        let mut tau_hat = None;
        let mut tau_bar = cfg.rate;
        if cfg.dynamic_rate {
            let search = min_tau(cache, occurred, t, cfg.tau_step, cfg.tau_ceiling)?;
            tau_hat = search.tau_hat;
            tau_bar = search.tau_hat.unwrap_or(cfg.tau_ceiling);
        }
        let fixed = match cfg.coalition {
            CoalitionPolicy::Grand => Some(grand),
            CoalitionPolicy::NonCooperative => Some(0),
            CoalitionPolicy::Endogenous if tau_hat.is_some() => Some(grand),
            CoalitionPolicy::Endogenous => None,
        };
        if let Some(bits) = fixed {
            let allocation = if bits == 0 {
                Vec::new()
            } else {
                let lazy = self.lazy(cache, tau_bar, occurred, t, bits)?;
                check_stability(&lazy, bits, cfg.mechanism)?.allocation
            };
            return Ok(Decision {
                bits,
                tau_bar,
                tau_hat,
                allocation,
                best_pair: None,
            });
        }
        let (selected, best_pair) = if cfg.shapley_parent_rate && cfg.mechanism == Mechanism::Shapley {
            (self.scan_parent_rate(cache, tau_bar, occurred, t)?, None)
        } else {
            let table = ValueTable::build(cache, tau_bar, occurred, t)?;
            let scan = stable_coalitions(&table, cfg.mechanism)?;
            let pair = best_internally_stable(&table, cfg.mechanism, |b| b.count_ones() == 2)?;
            (scan.selected, pair.map(|r| r.mask.bits()))
        };
        Ok(match selected {
            Some(report) => Decision {
                bits: report.mask.bits(),
                tau_bar,
                tau_hat,
                allocation: report.allocation,
                best_pair,
            },
            None => Decision {
                bits: 0,
                tau_bar,
                tau_hat,
                allocation: Vec::new(),
                best_pair,
            },
        })
    }

    fn lazy<'a>(&self, cache: &'a GameCache, tau_bar: f64, occurred: usize, t: f64, bits: u64) -> Result<LazyValues<'a>> {
        let mut lazy = LazyValues::new(cache, tau_bar, occurred, t);
        if self.config.shapley_parent_rate && self.config.mechanism == Mechanism::Shapley {
            lazy.subset_rate = Some(cache.rate_for(bits, tau_bar)?);
        }
        Ok(lazy)
    }

    /// Exhaustive scan where every Shapley subset is valued at its parent's rate.
    fn scan_parent_rate(&self, cache: &GameCache, tau_bar: f64, occurred: usize, t: f64) -> Result<Option<StabilityReport>> {
        let n = cache.params().n();
        let mut stable: Vec<StabilityReport> = Vec::new();
        for bits in 0u64..1 << n {
            if bits.count_ones() < 2 {
                continue;
            }
            let lazy = self.lazy(cache, tau_bar, occurred, t, bits)?;
            let report = check_stability(&lazy as &dyn StructureValues, bits, Mechanism::Shapley)?;
            if report.is_stable() {
                stable.push(report);
            }
        }
        let mut best: Option<StabilityReport> = None;
        for r in stable {
            if best.as_ref().is_none_or(|b| r.aggregate_benefit > b.aggregate_benefit) {
                best = Some(r);
            }
        }
        Ok(best)
    }
}

struct Decision {
    bits: u64,
    tau_bar: f64,
    tau_hat: Option<f64>,
    allocation: Vec<(usize, f64)>,
    best_pair: Option<u64>,
}

/// Load the files named by `config` from `data_dir` and simulate.
pub fn run_scenario(config: &ScenarioConfig, data_dir: &Path) -> Result<Trajectory> {
    Scenario::load(config.clone(), data_dir)?.run()
}

/// Simulate with the minimum gap-closing rate in force at each step.
pub fn run_min_tau(scenario: &Scenario) -> Result<Trajectory> {
    let mut cfg = scenario.config.clone();
    cfg.dynamic_rate = true;
    scenario.with_config(cfg)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonKind {
    /// Technology sharing against sanctions at the same rate.
    Instrument,
    /// Grand coalition against non-cooperation.
    Cooperation,
    /// No tipping against the configured events, one and then all.
    Tipping,
}

impl fmt::Display for ComparisonKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComparisonKind::Instrument => f.write_str("instrument"),
            ComparisonKind::Cooperation => f.write_str("cooperation"),
            ComparisonKind::Tipping => f.write_str("tipping"),
        }
    }
}

/// Reference run minus one variant, aligned by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSeries {
    pub label: String,
    pub years: Vec<f64>,
    pub total_value: Vec<f64>,
    pub temperature: Vec<f64>,
    pub size: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kind: ComparisonKind,
    pub labels: Vec<String>,
    pub runs: Vec<Trajectory>,
    pub differences: Vec<DifferenceSeries>,
}

pub fn difference(label: &str, reference: &Trajectory, variant: &Trajectory) -> DifferenceSeries {
    let pairs = reference.records.iter().zip(&variant.records);
    DifferenceSeries {
        label: label.to_string(),
        years: pairs.clone().map(|(a, _)| a.year).collect(),
        total_value: pairs.clone().map(|(a, b)| a.total_value - b.total_value).collect(),
        temperature: pairs.clone().map(|(a, b)| a.temperature - b.temperature).collect(),
        size: pairs.map(|(a, b)| a.size as i64 - b.size as i64).collect(),
    }
}

/// Runs that share `scenario`'s configuration except along `kind`.
pub fn comparison_variants(scenario: &Scenario, kind: ComparisonKind) -> Vec<(String, ScenarioConfig)> {
    let base = &scenario.config;
    match kind {
        ComparisonKind::Instrument => [IncentiveMode::TechSharing, IncentiveMode::Sanction]
            .into_iter()
            .map(|m| {
                let mut c = base.clone();
                c.incentive = m;
                (m.to_string(), c)
            })
            .collect(),
        ComparisonKind::Cooperation => [
            ("cooperation", CoalitionPolicy::Grand),
            ("non-cooperation", CoalitionPolicy::NonCooperative),
        ]
        .into_iter()
        .map(|(l, p)| {
            let mut c = base.clone();
            c.coalition = p;
            (l.to_string(), c)
        })
        .collect(),
        ComparisonKind::Tipping => (0..=base.tipping.len())
            .map(|k| {
                let mut c = base.clone();
                c.tipping.truncate(k);
                (format!("{k}-tipping"), c)
            })
            .collect(),
    }
}

pub fn run_comparison(scenario: &Scenario, kind: ComparisonKind) -> Result<Comparison> {
    let variants = comparison_variants(scenario, kind);
    let mut labels = Vec::new();
    let mut runs = Vec::new();
    for (label, cfg) in variants {
        runs.push(scenario.with_config(cfg)?.run()?);
        labels.push(label);
    }
    let differences = (1..runs.len())
        .map(|k| difference(&format!("{}-minus-{}", labels[0], labels[k]), &runs[0], &runs[k]))
        .collect();
    Ok(Comparison {
        kind,
        labels,
        runs,
        differences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(config: ScenarioConfig) -> Scenario {
        let regions = vec![
            RegionParams::new(14.13, 8.02, 0.0, 0.254, -0.152),
            RegionParams::new(23.52, 21.21, 0.0, 0.331, -0.178),
            RegionParams::new(4.90, 1.96, 0.0, 0.662, -0.412),
            RegionParams::new(7.29, 4.71, 0.0, 0.380, -0.245),
        ];
        let reference = regions.iter().map(RegionParams::private_optimum).collect();
        let names = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        Scenario::from_parts(config, names, regions, reference).unwrap()
    }

    fn short() -> ScenarioConfig {
        ScenarioConfig {
            end_year: 2040,
            tipping: vec![TippingEvent::new(2030, 0.04, DEFAULT_CHI)],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn zero_lambda_freezes_temperature() {
        let mut cfg = short();
        cfg.lambda = 0.0;
        cfg.tipping.clear();
        let traj = toy(cfg).run().unwrap();
        let first = &traj.records[0];
        for r in &traj.records {
            assert_eq!(r.temperature, 1.0);
            assert_eq!(r.mask, first.mask);
            assert_eq!(r.emissions, first.emissions);
        }
    }

    #[test]
    fn temperature_update_identity_and_state_monotone() {
        let traj = toy(short()).run().unwrap();
        assert_eq!(traj.records.len(), 21);
        for w in traj.records.windows(2) {
            let total: f64 = w[0].emissions.iter().sum();
            assert_eq!(w[1].temperature, w[0].temperature + 1.0 * 0.0021 * total);
            assert!(w[1].state >= w[0].state);
        }
        assert_eq!(traj.records[9].state, 0);
        assert_eq!(traj.records[10].state, 1);
    }

    #[test]
    fn deterministic() {
        let a = toy(short()).run().unwrap();
        let b = toy(short()).run().unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = short();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = short();
        cfg.tipping = vec![TippingEvent::new(2035, 0.02, 0.0035), TippingEvent::new(2030, 0.04, 0.0035)];
        assert!(cfg.validate().is_err());
        let mut cfg = short();
        cfg.tipping[0].year = 2200;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identical_variants_have_zero_difference() {
        let s = toy(short());
        let a = s.run().unwrap();
        let d = difference("same", &a, &a);
        assert!(d.total_value.iter().all(|&x| x == 0.0));
        assert!(d.size.iter().all(|&x| x == 0));
    }

    #[test]
    fn baseline_thresholds_follow_the_noncooperative_path() {
        let s = toy(short());
        let path = s.reference_path(0).unwrap();
        let th = s.thresholds().unwrap();
        assert_eq!(th, vec![path[10]]);
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg = ScenarioConfig::from_toml(
            "name = \"x\"\nrate = 0.05\nmechanism = \"shapley\"\n[[tipping]]\nyear = 2050\nloss_pct = 0.04\n",
        )
        .unwrap();
        assert_eq!(cfg.mechanism, Mechanism::Shapley);
        assert_eq!(cfg.tipping[0].chi, DEFAULT_CHI);
        assert!(ScenarioConfig::from_toml("bogus = 1").is_err());
    }
}
