//! Acceptance criteria for the coalition solver, each checked against an
//! oracle that does not share code with the implementation under test.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use coalition_core::calibration::{load_reference_emissions, load_regions};
use coalition_core::simulator::{Scenario, ScenarioConfig, TippingEvent, DEFAULT_CHI};
use coalition_core::types::RegionParams;
use coalition_core::{CoreError, Result};
use serde::Serialize;

mod criteria;
pub mod oracles;

/// Calibration the shipped region table must reproduce:
/// (name, α, β, ε, ρ, η).
pub const REFERENCE_TABLE: [(&str, f64, f64, f64, f64, f64); 12] = [
    ("China", 14.13, 8.02, 0.0, 0.254, -0.152),
    ("US", 23.52, 21.21, 0.0, 0.331, -0.178),
    ("EU", 24.18, 74.19, 0.0, 0.043, -0.020),
    ("Japan", 8.87, 22.90, 0.0, 0.021, -0.011),
    ("Russia", 6.23, 24.05, 0.0, 0.026, -0.017),
    ("India", 4.90, 1.96, 0.0, 0.662, -0.412),
    ("MidEast", 6.92, 4.41, 0.0, 0.452, -0.299),
    ("LatAm", 7.29, 4.71, 0.0, 0.380, -0.245),
    ("OthAsia", 4.16, 6.17, 0.0, 0.593, -0.454),
    ("Eurasia", 9.09, 9.06, 0.0, 0.211, -0.137),
    ("OHI", 14.17, 26.12, 0.0, 0.107, -0.054),
    ("Africa", 3.53, 2.02, 0.0, 0.446, -0.332),
];

/// Region data every criterion runs on.
#[derive(Debug, Clone)]
pub struct Context {
    pub names: Vec<String>,
    pub regions: Vec<RegionParams>,
    pub reference: Vec<f64>,
}

impl Context {
    /// Region table and reference emissions from `data_dir`.
    pub fn load(data_dir: &Path) -> Result<Self> {
        let rows = load_regions(data_dir.join("regions_rice2010.csv"))?;
        let (names, regions): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let reference = load_reference_emissions(data_dir.join("reference_emissions.csv"), &names)?;
        Ok(Context {
            names,
            regions,
            reference,
        })
    }

    pub fn scenario(&self, config: ScenarioConfig) -> Result<Scenario> {
        Scenario::from_parts(config, self.names.clone(), self.regions.clone(), self.reference.clone())
    }

    pub fn region_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CoreError::Validation(format!("region {name} missing")))
    }
}

/// One tipping event, L = 4% in 2050.
pub fn one_tipping(rate: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: "one-tipping".into(),
        rate,
        tipping: vec![TippingEvent::new(2050, 0.04, DEFAULT_CHI)],
        ..ScenarioConfig::default()
    }
}

/// Two tipping events, L = 2% in 2030 and 4% in 2050.
pub fn two_tipping(rate: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: "two-tipping".into(),
        rate,
        tipping: vec![
            TippingEvent::new(2030, 0.02, DEFAULT_CHI),
            TippingEvent::new(2050, 0.04, DEFAULT_CHI),
        ],
        ..ScenarioConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} [{:.1}s] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.title,
            self.detail
        )
    }
}

/// Identifiers and titles of every check; 0 is the calibration table itself.
pub const CRITERIA: [(u32, &str); 11] = [
    (0, "region table matches the reference calibration"),
    (1, "HJB residuals of analytic and collocation solutions"),
    (2, "collocation reduces to the analytic game without hazard"),
    (3, "K=4 and K=6 collocation agree"),
    (4, "unique negative roots of the curvature equations"),
    (5, "allocation properties"),
    (6, "homogeneous-region sign suite"),
    (7, "qualitative membership trajectories"),
    (8, "ordering claims over the case grid"),
    (9, "minimum sharing-rate path"),
    (10, "determinism and accounting"),
];

/// Criteria a correct solver cannot meet on the shipped calibration, with
/// the reason. They are reported as failures but tolerated by callers.
pub const KNOWN_RED: [(u32, &str); 3] = [
    (6, "the large-coalition derivative is positive and grows with n; the three-member tipping gain is negative"),
    (7, "the grand coalition stays stable at 1% until the mid 2060s, so the early exits and the 2030 recomposition do not occur"),
    (9, "the hazard is inactive below the threshold on cooperative paths, so the minimum rate does not drop at tipping"),
];

pub fn known_red(id: u32) -> Option<&'static str> {
    KNOWN_RED.iter().find(|(k, _)| *k == id).map(|(_, why)| *why)
}

impl Outcome {
    /// A failure not explained by `KNOWN_RED`, or a known-red criterion
    /// that unexpectedly passed.
    pub fn is_unexpected(&self) -> bool {
        self.passed == known_red(self.id).is_some()
    }
}

/// Run criterion `id`; solver errors count as failures.
pub fn run_one(ctx: &Context, id: u32) -> Outcome {
    let title = CRITERIA
        .iter()
        .find(|(k, _)| *k == id)
        .map(|(_, t)| *t)
        .unwrap_or("unknown criterion");
    let start = Instant::now();
    let result = match id {
        0 => criteria::calibration_table(ctx),
        1 => criteria::hjb_residuals(ctx),
        2 => criteria::hazard_free_equivalence(ctx),
        3 => criteria::degree_refinement(ctx),
        4 => criteria::uniqueness(ctx),
        5 => criteria::allocations(ctx),
        6 => criteria::homogeneous_signs(ctx),
        7 => criteria::trajectories(ctx),
        8 => criteria::orderings(ctx),
        9 => criteria::min_rate_path(ctx),
        10 => criteria::determinism(ctx),
        _ => Err(CoreError::Validation(format!("no criterion {id}"))),
    };
    let (passed, detail) = match result {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome {
        id,
        title,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Run every criterion accepted by `filter`, in order.
pub fn run(ctx: &Context, filter: impl Fn(u32) -> bool) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .filter(|(id, _)| filter(*id))
        .map(|(id, _)| run_one(ctx, *id))
        .collect()
}
