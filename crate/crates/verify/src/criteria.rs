use std::collections::HashMap;

use coalition_core::allocation::{shapley_on, Mechanism};
use coalition_core::analytic::{
    hjb_residuals as analytic_residuals, scan_u2_roots, solve_post_tipping, uniqueness_scan, StageSpec,
};
use coalition_core::calibration::{build_case_grid, write_membership_matrix, CaseGridSpec};
use coalition_core::collocation::solve_full_chain;
use coalition_core::homogeneous::{
    emission_gap_derivative, instrument_equivalence, shrink_derivative, shrink_limit_reference,
    tipping_expansion_surface, HomoParams,
};
use coalition_core::simulator::{
    difference, run_comparison, run_min_tau, ComparisonKind, ScenarioConfig, Trajectory,
};
use coalition_core::stability::{check_stability, min_tau, normalize, stability_gap, GameCache, StructureValues, ValueTable};
use coalition_core::types::{CoalitionMask, IncentiveMode};
use coalition_core::{CoreError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::{linear_scan_root, shapley_by_permutations};
use crate::{one_tipping, two_tipping, Context, REFERENCE_TABLE};

type Verdict = Result<(bool, String)>;

const ALL: u64 = (1 << 12) - 1;

fn random_masks(rng: &mut ChaCha8Rng, count: usize) -> Vec<u64> {
    (0..count).map(|_| normalize(rng.gen_range(0..=ALL))).collect()
}

pub fn calibration_table(ctx: &Context) -> Verdict {
    if ctx.names.len() != REFERENCE_TABLE.len() {
        return Ok((false, format!("{} rows, expected 12", ctx.names.len())));
    }
    let mut mismatches = Vec::new();
    for ((name, p), row) in ctx.names.iter().zip(&ctx.regions).zip(REFERENCE_TABLE) {
        let got = (name.as_str(), p.alpha, p.beta, p.epsilon, p.rho, p.eta);
        if got != row {
            mismatches.push(name.clone());
        }
    }
    Ok((
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "12 rows identical".into()
        } else {
            format!("rows differ: {}", mismatches.join(", "))
        },
    ))
}

/// 100 random (coalition, τ̄, state, T) draws on the two-tipping game.
pub fn hjb_residuals(ctx: &Context) -> Verdict {
    let base = ctx.scenario(two_tipping(0.0))?.model_params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rates = [0.0, 0.01, 0.05, 0.10];
    let (mut analytic, mut nodes) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let bits = normalize(rng.gen_range(0..=ALL));
        let mut p = base.clone();
        p.tau_bar = rates[rng.gen_range(0..rates.len())];
        let state = rng.gen_range(0..=2);
        let t = rng.gen_range(0.5..5.5);
        let mask = CoalitionMask::from_bits(12, bits);
        let spec = StageSpec::for_coalition(&p, &mask, state)?;
        let sol = solve_post_tipping(&mask, spec, &p)?;
        analytic = analytic_residuals(&sol, &p, t).into_iter().fold(analytic, f64::max);
        let game = solve_full_chain(&mask, &p, p.tau_for(&mask)?)?;
        nodes = nodes.max(game.node_residuals(&p)?);
    }
    Ok((
        analytic < 1e-8 && nodes < 1e-9,
        format!("max relative analytic residual {analytic:.2e} (< 1e-8), max node residual {nodes:.2e} (< 1e-9)"),
    ))
}

/// χ = 0 on every event: each hazard stage must equal the loss-shifted quadratic.
pub fn hazard_free_equivalence(ctx: &Context) -> Verdict {
    let mut p = ctx.scenario(two_tipping(0.05))?.model_params()?;
    p.chi = vec![0.0; p.chi.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for bits in random_masks(&mut rng, 20) {
        let mask = CoalitionMask::from_bits(12, bits);
        let game = solve_full_chain(&mask, &p, p.tau_for(&mask)?)?;
        for k in 0..p.events() {
            let quad = game.base.with_losses(&p, k).layout_values();
            let lo = p.t_bar[k];
            for (player, q) in quad.iter().enumerate() {
                for i in 0..=50 {
                    let t = lo + (p.t_domain_max - lo) * i as f64 / 50.0;
                    let exact = q.value(t);
                    let got = game.player_value(player, k, t)?;
                    worst = worst.max((got - exact).abs() / exact.abs().max(1.0));
                }
            }
        }
    }
    Ok((worst < 1e-6, format!("max relative deviation {worst:.2e} (< 1e-6) over 20 coalitions")))
}

/// Sup-norm relative difference of every player's value on [T̲, T̄].
pub fn degree_refinement(ctx: &Context) -> Verdict {
    let mut p4 = ctx.scenario(one_tipping(0.01))?.model_params()?;
    p4.cheb_degree = 4;
    let mut p6 = p4.clone();
    p6.cheb_degree = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut masks = vec![ALL, 0];
    masks.extend(random_masks(&mut rng, 8));
    let lo = p4.t_bar[0];
    let mut worst = 0.0f64;
    for bits in masks {
        let mask = CoalitionMask::from_bits(12, bits);
        let rate = p4.tau_for(&mask)?;
        let a = solve_full_chain(&mask, &p4, rate)?;
        let b = solve_full_chain(&mask, &p6, rate)?;
        for player in 0..a.stages[0].values.len() {
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for i in 0..=200 {
                let t = lo + (p4.t_domain_max - lo) * i as f64 / 200.0;
                let vb = b.player_value(player, 0, t)?;
                diff = diff.max((a.player_value(player, 0, t)? - vb).abs());
                scale = scale.max(vb.abs());
            }
            worst = worst.max(diff / scale.max(1.0));
        }
    }
    Ok((
        worst < 1e-3,
        format!("max sup-norm relative difference {worst:.2e} (< 1e-3) over 10 coalitions"),
    ))
}

pub fn uniqueness(ctx: &Context) -> Verdict {
    let p = ctx.scenario(ScenarioConfig::default())?.model_params()?;
    let mut bad = Vec::new();
    for i in 0..12 {
        let mask = CoalitionMask::from_bits(12, ALL & !(1 << i));
        let spec = StageSpec::for_coalition(&p, &mask, 0)?;
        let rep = uniqueness_scan(&mask, spec, &p)?;
        if (rep.f_roots, rep.g_roots, rep.u2_roots) != (1, 1, 1) {
            bad.push(format!("{}: F {} G {} u2 {}", p.names[i], rep.f_roots, rep.g_roots, rep.u2_roots));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut masks = vec![ALL, 0];
    masks.extend(random_masks(&mut rng, 30));
    let u2_hi = 0.5 * p.r / (p.lambda * p.lambda);
    for bits in &masks {
        let mask = CoalitionMask::from_bits(12, *bits);
        let spec = StageSpec::for_coalition(&p, &mask, 0)?;
        let roots = scan_u2_roots(&mask, spec, &p, -1e6, u2_hi, 10_000);
        if roots != 1 {
            bad.push(format!("{bits:#x}: {roots} u2 roots"));
        }
    }
    Ok((
        bad.is_empty(),
        if bad.is_empty() {
            format!("12 leave-one-out games with one root each of F, G and u2; {} further games with one u2 root", masks.len())
        } else {
            bad.join("; ")
        },
    ))
}

pub fn allocations(ctx: &Context) -> Verdict {
    let s = ctx.scenario(one_tipping(0.01))?;
    let cache = GameCache::new(s.model_params()?)?;
    let table = ValueTable::build(&cache, 0.01, 0, 1.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut shapley_err = 0.0f64;
    let value = |b: u64| if b == 0 { 0.0 } else { table.coalition(b).expect("tabulated") };
    for _ in 0..25 {
        let m = rng.gen_range(2..=6);
        let mut members: Vec<usize> = (0..12).collect();
        for i in 0..m {
            let j = rng.gen_range(i..12);
            members.swap(i, j);
        }
        members.truncate(m);
        members.sort_unstable();
        let bits = members.iter().fold(0u64, |b, &i| b | 1 << i);
        let oracle = shapley_by_permutations(&members, &value);
        let got = shapley_on(bits, |b| table.coalition(b).ok())?;
        for (a, b) in got.values.iter().zip(&oracle) {
            shapley_err = shapley_err.max((a - b).abs());
        }
    }
    let (mut balance, mut ir_violation, mut feasible) = (0.0f64, 0.0f64, 0usize);
    for bits in random_masks(&mut rng, 300) {
        if bits == 0 {
            continue;
        }
        let v = table.coalition(bits)?;
        for mech in [Mechanism::GammaCore, Mechanism::Shapley] {
            let rep = check_stability(&table, bits, mech)?;
            let total: f64 = rep.allocation.iter().map(|(_, x)| x).sum();
            balance = balance.max((total - v).abs() / v.abs().max(1.0));
            if mech == Mechanism::GammaCore && rep.feasible {
                feasible += 1;
                for &(_, margin) in &rep.internal_margins {
                    ir_violation = ir_violation.max(-margin / v.abs().max(1.0));
                }
            }
        }
    }
    let pass = shapley_err <= 1e-10 && balance <= 1e-8 && ir_violation <= 1e-12;
    Ok((
        pass,
        format!(
            "Shapley vs permutations {shapley_err:.1e} (<= 1e-10); budget balance {balance:.1e}·|V| (<= 1e-8); \
             worst γ-core shortfall below outside option {ir_violation:.1e}·|V| (<= 1e-12) over {feasible} feasible splits"
        ),
    ))
}

pub fn homogeneous_signs(ctx: &Context) -> Verdict {
    let mean = HomoParams::mean_region(&ctx.regions);
    let mut notes = Vec::new();

    let mut big = HomoParams::new(mean.clone(), 10_000);
    big.rate = 0.05;
    let slope = shrink_derivative(&big, 1.0)?;
    let limit = shrink_limit_reference(&big);
    let rel = (slope - limit).abs() / limit.abs();
    let limit_ok = rel <= 0.01;
    notes.push(format!("dψ/dT at n=1e4 is {slope:.4} vs limit {limit:.4} (rel {rel:.2e}, <= 1e-2)"));

    let small = HomoParams::new(mean.clone(), 12);
    let mut max_slope = f64::MIN;
    for m in 2..=12 {
        for t in [1.0, 2.0, 3.0, 4.0, 5.0] {
            max_slope = max_slope.max(emission_gap_derivative(&small, m, t)?);
        }
    }
    let emission_ok = max_slope < 0.0;
    notes.push(format!("max dq/dT gap {max_slope:.3e} (< 0)"));

    let mut surf = HomoParams::new(mean.clone(), 12).with_events(&[0.02, 0.04], &[0.0035, 0.0035], &[1.0, 1.0]);
    surf.rate = 0.05;
    let sizes: Vec<usize> = (2..=12).collect();
    let temps = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];
    let mut wrong = Vec::new();
    for event in 0..2 {
        let s = tipping_expansion_surface(&surf, event, &sizes, &temps)?;
        for (m, row) in s.sizes.iter().zip(&s.values) {
            let expect_positive = *m <= 3;
            let n_bad = row.iter().filter(|&&v| if expect_positive { v <= 0.0 } else { v >= 0.0 }).count();
            if n_bad > 0 {
                wrong.push(format!("event {} m={m}: {n_bad}/{}", event + 1, row.len()));
            }
        }
    }
    let surface_ok = wrong.is_empty();
    notes.push(if surface_ok {
        "ψ_tp sign pattern holds".into()
    } else {
        format!("ψ_tp sign pattern broken at {}", wrong.join(", "))
    });

    let eq = instrument_equivalence(&mean, 0.025, 0.05, 0.05);
    let identity_ok = eq.sharing == eq.sanction;
    notes.push(format!("instrument identity {}", if identity_ok { "exact" } else { "broken" }));

    Ok((limit_ok && emission_ok && surface_ok && identity_ok, notes.join("; ")))
}

fn exits(traj: &Trajectory, region: usize, after: f64) -> Vec<f64> {
    traj.records
        .windows(2)
        .filter(|w| w[1].year >= after && w[0].mask >> region & 1 == 1 && w[1].mask >> region & 1 == 0)
        .map(|w| w[1].year)
        .collect()
}

fn record_at(traj: &Trajectory, year: f64) -> Option<&coalition_core::simulator::TrajectoryRecord> {
    traj.records.iter().find(|r| (r.year - year).abs() < 1e-9)
}

pub fn trajectories(ctx: &Context) -> Verdict {
    let one = ctx.scenario(one_tipping(0.01))?.run()?;
    let two = ctx.scenario(two_tipping(0.01))?.run()?;
    let idx = |n: &str| ctx.region_index(n);
    let mut notes = Vec::new();

    let at_tip = record_at(&one, 2050.0).map(|r| r.size).unwrap_or(0);
    let a = at_tip == 12;
    notes.push(format!("(a) {at_tip} members in 2050"));

    let oth = exits(&one, idx("OthAsia")?, 2050.0);
    let mid = exits(&one, idx("MidEast")?, 2050.0);
    let near = |ys: &[f64], y: f64| ys.iter().any(|e| (e - y).abs() <= 3.0);
    let b = near(&oth, 2054.0) && near(&mid, 2095.0);
    notes.push(format!("(b) OthAsia exits {oth:?}, MidEast exits {mid:?}"));

    let after: Vec<usize> = one.records.iter().filter(|r| r.year >= 2050.0).map(|r| r.size).collect();
    let c = after.windows(2).all(|w| w[1] <= w[0]);
    notes.push(format!("(c) post-tipping sizes {}", if c { "non-increasing" } else { "rise at some step" }));

    let (russia, latam, eurasia) = (idx("Russia")?, idx("LatAm")?, idx("Eurasia")?);
    let has = |mask: u64, i: usize| mask >> i & 1 == 1;
    let d = two.records.windows(2).any(|w| {
        (2027.0..=2033.0).contains(&w[1].year)
            && has(w[1].mask, russia)
            && has(w[1].mask, latam)
            && !has(w[1].mask, eurasia)
            && (!has(w[0].mask, russia) || !has(w[0].mask, latam) || has(w[0].mask, eurasia))
    });
    let around: Vec<String> = two
        .records
        .iter()
        .filter(|r| (2027.0..=2033.0).contains(&r.year))
        .map(|r| format!("{}:{}", r.year, r.size))
        .collect();
    notes.push(format!(
        "(d) two-tipping recomposition {} (sizes {})",
        if d { "found" } else { "absent" },
        around.join(" ")
    ));
    Ok((a && b && c && d, notes.join("; ")))
}

struct CaseRuns {
    coop_positive: bool,
    min_coop_gap: f64,
}

pub fn orderings(ctx: &Context) -> Verdict {
    let cases = build_case_grid(&CaseGridSpec::standard(), &ScenarioConfig::default())?;
    let us = ctx.region_index("US")?;
    let china = ctx.region_index("China")?;
    let dyad = 1u64 << us | 1u64 << china;
    let mut no_tip: HashMap<(u64, String), Trajectory> = HashMap::new();
    let (mut a_fail, mut b_fail, mut c_fail) = (Vec::new(), Vec::new(), Vec::new());
    let mut min_gap = f64::INFINITY;
    let (mut b_cases, mut pair_hits, mut pair_total) = (0usize, 0usize, 0usize);
    for case in &cases {
        let cfg = &case.config;
        let scenario = ctx.scenario(cfg.clone())?;

        let coop = coop_gap(&scenario)?;
        min_gap = min_gap.min(coop.min_coop_gap);
        if !coop.coop_positive {
            a_fail.push(case.id.clone());
        }

        let tipped = scenario.run()?;
        for p in &tipped.pair_selection {
            pair_total += 1;
            if *p == Some(dyad) {
                pair_hits += 1;
            }
        }

        let key = (cfg.rate.to_bits(), cfg.mechanism.to_string());
        if !no_tip.contains_key(&key) {
            let mut plain = cfg.clone();
            plain.tipping.clear();
            no_tip.insert(key.clone(), ctx.scenario(plain)?.run()?);
        }
        let base = &no_tip[&key];
        let sizes_ok = tipped.records.iter().zip(&base.records).all(|(t, b)| {
            if t.state == 0 {
                t.size <= b.size
            } else {
                t.size >= b.size
            }
        });
        if !sizes_ok {
            c_fail.push(case.id.clone());
        }

        if (cfg.rate - 0.05).abs() < 1e-12 {
            b_cases += 1;
            let mut sanction = cfg.clone();
            sanction.incentive = IncentiveMode::Sanction;
            let other = ctx.scenario(sanction)?.run()?;
            let d = difference("sharing-minus-sanction", &tipped, &other);
            if d.total_value.iter().any(|&x| x < 0.0) {
                b_fail.push(case.id.clone());
            }
        }
    }
    let share = pair_hits as f64 / pair_total.max(1) as f64;
    let d = share > 0.5;
    let notes = [
        format!("(a) cooperation gap > 0 in {}/{} cases (min {min_gap:.3})", cases.len() - a_fail.len(), cases.len()),
        format!("(b) sharing >= sanction in {}/{b_cases} cases at 5%", b_cases - b_fail.len()),
        format!("(c) size ordering holds in {}/{} cases", cases.len() - c_fail.len(), cases.len()),
        format!("(d) US+China chosen in {pair_hits}/{pair_total} two-member selections ({:.1}%)", 100.0 * share),
    ];
    let mut detail = notes.join("; ");
    for (tag, list) in [("a", &a_fail), ("b", &b_fail), ("c", &c_fail)] {
        if !list.is_empty() {
            detail.push_str(&format!("; ({tag}) failing: {}", list.join(",")));
        }
    }
    Ok((a_fail.is_empty() && b_fail.is_empty() && c_fail.is_empty() && d, detail))
}

fn coop_gap(scenario: &coalition_core::simulator::Scenario) -> Result<CaseRuns> {
    let cmp = run_comparison(scenario, ComparisonKind::Cooperation)?;
    debug_assert_eq!(cmp.runs[0].records[0].size, 12);
    let gap = &cmp.differences[0].total_value;
    Ok(CaseRuns {
        coop_positive: gap.iter().all(|&x| x > 0.0),
        min_coop_gap: gap.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

pub fn min_rate_path(ctx: &Context) -> Verdict {
    let mut notes = Vec::new();
    let one = ctx.scenario(one_tipping(0.01))?;
    let hat = run_min_tau(&one)?;
    let mut below = true;
    for rate in [0.01, 0.05, 0.10] {
        let fixed = ctx.scenario(one_tipping(rate))?.run()?;
        let ok = hat.records.iter().zip(&fixed.records).all(|(h, f)| h.temperature <= f.temperature);
        below &= ok;
        let end = fixed.records.last().map(|r| r.temperature).unwrap_or(f64::NAN);
        notes.push(format!("T2100 fixed {rate}: {end:.4}"));
    }
    notes.insert(
        0,
        format!(
            "τ̂ path T2100 {:.4}, weakly below fixed paths: {below}",
            hat.records.last().map(|r| r.temperature).unwrap_or(f64::NAN)
        ),
    );

    let two = ctx.scenario(two_tipping(0.01))?;
    let hat_two = run_min_tau(&two)?;
    let mut drops = Vec::new();
    let mut all_drop = true;
    for (traj, years) in [(&hat, vec![2050.0]), (&hat_two, vec![2030.0, 2050.0])] {
        for y in years {
            let before = record_at(traj, y - 1.0).and_then(|r| r.tau_hat);
            let at = record_at(traj, y).and_then(|r| r.tau_hat);
            let dropped = matches!((before, at), (Some(b), Some(a)) if a < b);
            all_drop &= dropped;
            drops.push(format!("{y}: {before:?} -> {at:?}"));
        }
    }
    notes.push(format!("τ̂ at tipping years {}", drops.join(", ")));

    let cache = GameCache::new(one.model_params()?)?;
    let mut worst = 0.0f64;
    for (occurred, t) in [(0, 1.2), (0, 1.8), (0, 2.4), (1, 2.4)] {
        let search = min_tau(&cache, occurred, t, 1e-4, 0.5)?;
        let mut gap = |tau: f64| stability_gap(&cache, tau, occurred, t).unwrap_or(f64::NAN);
        let scan = linear_scan_root(&mut gap, 1e-5, 0.5);
        match (search.tau_hat, scan) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => worst = f64::INFINITY,
        }
    }
    let oracle_ok = worst <= 1e-5;
    notes.push(format!("bisection vs 1e-5 scan max |Δτ̂| {worst:.2e} (<= 1e-5)"));
    Ok((below && all_drop && oracle_ok, notes.join("; ")))
}

pub fn determinism(ctx: &Context) -> Verdict {
    let s = ctx.scenario(two_tipping(0.01))?;
    let a = s.run()?;
    let b = s.run()?;
    let bits = |t: &Trajectory| -> Vec<u64> {
        t.records
            .iter()
            .flat_map(|r| {
                [r.temperature, r.collective_value, r.total_value, r.tau]
                    .into_iter()
                    .chain(r.emissions.iter().copied())
                    .chain(r.values.iter().copied())
                    .map(f64::to_bits)
                    .chain([r.mask])
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let identical = bits(&a) == bits(&b);

    let cfg = &s.config;
    let lambda = cfg.lambda;
    let update_ok = a.records.windows(2).all(|w| {
        let total: f64 = w[0].emissions.iter().sum();
        w[1].temperature == w[0].temperature + cfg.dt * lambda * total
    });

    let dir = tempfile::tempdir().map_err(|e| CoreError::io("tempdir", e))?;
    let path = dir.path().join("membership.csv");
    write_membership_matrix(&a.records, &a.names, &path)?;
    let mut reader = csv::Reader::from_path(&path)?;
    let mut rows = 0;
    let mut matrix_ok = true;
    for (rec, r) in reader.records().zip(&a.records) {
        let rec = rec?;
        rows += 1;
        let year: f64 = rec[0].parse().unwrap_or(f64::NAN);
        let temp: f64 = rec[1].parse().unwrap_or(f64::NAN);
        let mask = (0..a.names.len()).fold(0u64, |m, i| if &rec[2 + i] == "1" { m | 1 << i } else { m });
        matrix_ok &= year == r.year && temp == r.temperature && mask == r.mask;
    }
    matrix_ok &= rows == a.records.len();
    Ok((
        identical && update_ok && matrix_ok,
        format!(
            "repeat runs bit-identical: {identical}; temperature update exact: {update_ok}; membership matrix consistent: {matrix_ok} ({rows} rows)"
        ),
    ))
}
