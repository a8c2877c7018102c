//! End-to-end checks on the shipped twelve-region calibration.

use std::path::{Path, PathBuf};

use coalition_core::allocation::Mechanism;
use coalition_core::calibration::{build_case_grid, read_trajectories, write_trajectories, CaseGridSpec};
use coalition_core::simulator::{run_scenario, CoalitionPolicy, Scenario, ScenarioConfig, TippingEvent, DEFAULT_CHI};
use coalition_core::stability::{check_stability, min_tau, stability_gap, GameCache, ValueTable};
use proptest::prelude::*;

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn one_tipping() -> ScenarioConfig {
    ScenarioConfig {
        tipping: vec![TippingEvent::new(2050, 0.04, DEFAULT_CHI)],
        ..ScenarioConfig::default()
    }
}

#[test]
fn published_grid_has_ninety_distinct_cases() {
    let cases = build_case_grid(&CaseGridSpec::standard(), &ScenarioConfig::default()).unwrap();
    assert_eq!(cases.len(), 90);
    let mut ids: Vec<&str> = cases.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 90);
    assert_eq!(cases.iter().filter(|c| c.config.tipping.len() == 2).count(), 36);
    for c in &cases {
        c.config.validate().unwrap();
    }
}

#[test]
fn everyone_is_a_member_in_the_tipping_years() {
    let traj = run_scenario(&one_tipping(), &data()).unwrap();
    assert_eq!(traj.records.len(), 81);
    for r in traj.records.iter().filter(|r| (2050.0..=2053.0).contains(&r.year)) {
        assert_eq!(r.size, 12, "{}", r.year);
        assert_eq!(r.state, 1);
    }
    let pre: Vec<_> = traj.records.iter().filter(|r| r.year < 2050.0).collect();
    assert!(pre.iter().all(|r| r.state == 0));
    // temperature rises while net emissions stay positive
    for w in traj.records.windows(2) {
        if w[0].emissions.iter().sum::<f64>() > 0.0 {
            assert!(w[1].temperature > w[0].temperature);
        }
    }
}

#[test]
fn trajectory_round_trip_is_exact() {
    let traj = run_scenario(&one_tipping(), &data()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trajectories(&traj.records, &traj.names, &path).unwrap();
    let (names, records) = read_trajectories(&path).unwrap();
    assert_eq!(names, traj.names);
    assert_eq!(records, traj.records);
}

#[test]
fn grand_coalition_beats_non_cooperation_in_total_value() {
    let base = Scenario::load(one_tipping(), &data()).unwrap();
    let run = |policy| {
        let mut c = base.config.clone();
        c.coalition = policy;
        base.with_config(c).unwrap().run().unwrap()
    };
    let coop = run(CoalitionPolicy::Grand);
    let none = run(CoalitionPolicy::NonCooperative);
    for (a, b) in coop.records.iter().zip(&none.records) {
        assert!(a.total_value > b.total_value, "{}", a.year);
        assert!(a.temperature <= b.temperature, "{}", a.year);
    }
}

#[test]
fn min_rate_sits_on_the_sign_change_of_the_gap() {
    let s = Scenario::load(one_tipping(), &data()).unwrap();
    let cache = GameCache::new(s.model_params().unwrap()).unwrap();
    let step = 1e-4;
    for t in [1.0, 1.5, 2.5] {
        let found = min_tau(&cache, 0, t, step, 0.5).unwrap();
        let tau = found.tau_hat.expect("closes below the ceiling");
        assert!(stability_gap(&cache, tau, 0, t).unwrap() >= 0.0);
        assert!(stability_gap(&cache, (tau - step).max(0.0), 0, t).unwrap() < 0.0 || tau == 0.0);
    }
}

fn shipped_table() -> &'static ValueTable {
    use std::sync::OnceLock;
    static TABLE: OnceLock<ValueTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let s = Scenario::load(one_tipping(), &data()).unwrap();
        let cache = GameCache::new(s.model_params().unwrap()).unwrap();
        ValueTable::build(&cache, 0.01, 0, 1.5).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn allocations_are_budget_balanced(bits in 3u64..4096) {
        prop_assume!(bits.count_ones() >= 2);
        let table = shipped_table();
        for mech in [Mechanism::GammaCore, Mechanism::Shapley] {
            let rep = check_stability(table, bits, mech).unwrap();
            let total: f64 = rep.allocation.iter().map(|(_, x)| x).sum();
            prop_assert_eq!(rep.allocation.len(), bits.count_ones() as usize);
            let v: f64 = coalition_core::stability::StructureValues::coalition(table, bits).unwrap();
            prop_assert!((total - v).abs() <= 1e-8 * v.abs().max(1.0));
            if mech == Mechanism::GammaCore && rep.feasible {
                prop_assert!(rep.internal_margins.iter().all(|(_, m)| *m >= -1e-9 * v.abs()));
            }
        }
    }
}
