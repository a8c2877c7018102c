//! Coalition stability: memoized game solutions, per-temperature value
//! tables, internal/external stability, selection, the grand-coalition gap
//! and the minimum sharing-rate search.

use std::sync::Arc;

use dashmap::DashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{gamma_core, shapley_member, shapley_on, Mechanism};
use crate::collocation::{solve_full_chain_with, GameSolution, SolverOptions};
use crate::error::{CoreError, Result};
use crate::types::{compute_tau, CoalitionMask, ModelParams};

/// Largest region count the exhaustive scans accept.
pub const MAX_ENUMERATED_REGIONS: usize = 20;

/// Structures with a single member are the same game as full non-cooperation.
pub fn normalize(bits: u64) -> u64 {
    if bits.count_ones() == 1 {
        0
    } else {
        bits
    }
}

/// Thread-safe memo of solved games keyed by (structure, instrument rate).
/// Solutions cover every tipping state and temperature, so neither enters the key.
pub struct GameCache {
    params: Arc<ModelParams>,
    options: SolverOptions,
    games: DashMap<(u64, u64), Arc<GameSolution>>,
}

impl GameCache {
    pub fn new(params: ModelParams) -> Result<Self> {
        GameCache::with_options(params, SolverOptions::default())
    }

    pub fn with_options(params: ModelParams, options: SolverOptions) -> Result<Self> {
        params.validate()?;
        if params.n() > 63 {
            return Err(CoreError::InvalidParams(format!(
                "{} regions exceed the 63-region structure limit",
                params.n()
            )));
        }
        Ok(GameCache {
            params: Arc::new(params),
            options,
            games: DashMap::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    /// Instrument rate of `bits` when the grand-coalition rate is `tau_bar`.
    pub fn rate_for(&self, bits: u64, tau_bar: f64) -> Result<f64> {
        let mask = CoalitionMask::from_bits(self.params.n(), normalize(bits));
        compute_tau(&mask, tau_bar, &self.params.t0_benefits)
    }

    /// Game of structure `bits` at the configured grand-coalition rate.
    pub fn game(&self, bits: u64) -> Result<Arc<GameSolution>> {
        self.game_at(bits, self.params.tau_bar)
    }

    pub fn game_at(&self, bits: u64, tau_bar: f64) -> Result<Arc<GameSolution>> {
        let rate = self.rate_for(bits, tau_bar)?;
        self.game_with_rate(bits, rate)
    }

    pub fn game_with_rate(&self, bits: u64, rate: f64) -> Result<Arc<GameSolution>> {
        let bits = normalize(bits);
        let rate = if bits == 0 { 0.0 } else { rate };
        let key = (bits, rate.to_bits());
        if let Some(hit) = self.games.get(&key) {
            return Ok(Arc::clone(&hit));
        }
        let mask = CoalitionMask::from_bits(self.params.n(), bits);
        let solved = solve_full_chain_with(&mask, &self.params, rate, &self.options)
            .map_err(|e| e.in_structure(mask.label(&self.params.names)))?;
        let solved = Arc::new(solved);
        self.games.insert(key, Arc::clone(&solved));
        Ok(solved)
    }

    /// Solve every admissible structure at `tau_bar`.
    pub fn prefill(&self, tau_bar: f64) -> Result<()> {
        let n = self.params.n();
        check_enumerable(n)?;
        (0u64..1 << n)
            .into_par_iter()
            .filter(|b| b.count_ones() != 1)
            .try_for_each(|b| self.game_at(b, tau_bar).map(|_| ()))
    }
}

fn check_enumerable(n: usize) -> Result<()> {
    if n > MAX_ENUMERATED_REGIONS {
        Err(CoreError::InvalidParams(format!(
            "coalition enumeration supports at most {MAX_ENUMERATED_REGIONS} regions, got {n}"
        )))
    } else {
        Ok(())
    }
}

/// Values of every structure at one temperature and tipping state.
pub trait StructureValues {
    fn n(&self) -> usize;
    /// V of coalition `bits`; a singleton is worth its non-cooperative value
    /// and the empty set zero.
    fn coalition(&self, bits: u64) -> Result<f64>;
    /// W_j when `bits` is the coalition.
    fn outside(&self, bits: u64, j: usize) -> Result<f64>;

    /// Sum of all players' values under structure `bits`.
    fn aggregate(&self, bits: u64) -> Result<f64> {
        let mut total = if bits.count_ones() >= 2 {
            self.coalition(bits)?
        } else {
            0.0
        };
        for j in 0..self.n() {
            if bits.count_ones() < 2 || bits >> j & 1 == 0 {
                total += self.outside(bits, j)?;
            }
        }
        Ok(total)
    }
}

/// Dense table over all 2ⁿ structures.
#[derive(Debug, Clone)]
pub struct ValueTable {
    n: usize,
    coalition: Vec<f64>,
    outside: Vec<f64>,
    pub t: f64,
    pub occurred: usize,
}

impl ValueTable {
    pub fn build(cache: &GameCache, tau_bar: f64, occurred: usize, t: f64) -> Result<Self> {
        let n = cache.params().n();
        check_enumerable(n)?;
        let size = 1usize << n;
        let none = cache.game_at(0, tau_bar)?;
        let mut coalition = vec![0.0; size];
        let mut outside = vec![f64::NAN; size * n];
        let singles: Vec<f64> = (0..n)
            .map(|j| none.outsider_value(j, occurred, t))
            .collect::<Result<_>>()?;
        let rows: Vec<(f64, Vec<f64>)> = (0..size as u64)
            .into_par_iter()
            .map(|b| -> Result<(f64, Vec<f64>)> {
                if b.count_ones() < 2 {
                    let v = if b == 0 { 0.0 } else { singles[b.trailing_zeros() as usize] };
                    let mut row = singles.clone();
                    if b != 0 {
                        row[b.trailing_zeros() as usize] = f64::NAN;
                    }
                    return Ok((v, row));
                }
                let game = cache.game_at(b, tau_bar)?;
                let v = game.coalition_value(occurred, t)?.expect("coalition present");
                let mut row = vec![f64::NAN; n];
                for (j, slot) in row.iter_mut().enumerate() {
                    if b >> j & 1 == 0 {
                        *slot = game.outsider_value(j, occurred, t)?;
                    }
                }
                Ok((v, row))
            })
            .collect::<Result<_>>()?;
        for (b, (v, row)) in rows.into_iter().enumerate() {
            coalition[b] = v;
            outside[b * n..(b + 1) * n].copy_from_slice(&row);
        }
        Ok(ValueTable {
            n,
            coalition,
            outside,
            t,
            occurred,
        })
    }
}

impl StructureValues for ValueTable {
    fn n(&self) -> usize {
        self.n
    }

    fn coalition(&self, bits: u64) -> Result<f64> {
        Ok(self.coalition[bits as usize])
    }

    fn outside(&self, bits: u64, j: usize) -> Result<f64> {
        let b = if bits.count_ones() == 1 && bits >> j & 1 == 1 {
            0
        } else {
            normalize(bits)
        };
        Ok(self.outside[b as usize * self.n + j])
    }
}

/// On-demand values solved through the cache; `subset_rate` pins the rate of
/// every coalition value (used for parent-rate Shapley subsets).
pub struct LazyValues<'a> {
    pub cache: &'a GameCache,
    pub tau_bar: f64,
    pub occurred: usize,
    pub t: f64,
    pub subset_rate: Option<f64>,
}

impl<'a> LazyValues<'a> {
    pub fn new(cache: &'a GameCache, tau_bar: f64, occurred: usize, t: f64) -> Self {
        LazyValues {
            cache,
            tau_bar,
            occurred,
            t,
            subset_rate: None,
        }
    }
}

impl StructureValues for LazyValues<'_> {
    fn n(&self) -> usize {
        self.cache.params().n()
    }

    fn coalition(&self, bits: u64) -> Result<f64> {
        match bits.count_ones() {
            0 => Ok(0.0),
            1 => self
                .cache
                .game_at(0, self.tau_bar)?
                .outsider_value(bits.trailing_zeros() as usize, self.occurred, self.t),
            _ => {
                let game = match self.subset_rate {
                    Some(rate) => self.cache.game_with_rate(bits, rate)?,
                    None => self.cache.game_at(bits, self.tau_bar)?,
                };
                Ok(game
                    .coalition_value(self.occurred, self.t)?
                    .expect("coalition present"))
            }
        }
    }

    fn outside(&self, bits: u64, j: usize) -> Result<f64> {
        self.cache
            .game_at(bits, self.tau_bar)?
            .outsider_value(j, self.occurred, self.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub mask: CoalitionMask,
    pub internal_ok: bool,
    pub external_ok: bool,
    /// (member, allocation − outside option); for an infeasible γ-core split
    /// the member's negative claim if smaller.
    pub internal_margins: Vec<(usize, f64)>,
    /// (outsider, stay-out value − allocation after joining).
    pub external_margins: Vec<(usize, f64)>,
    /// (member, allocated value).
    pub allocation: Vec<(usize, f64)>,
    pub feasible: bool,
    /// Sum of every player's value under this structure.
    pub aggregate_benefit: f64,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.internal_ok && self.external_ok
    }
}

/// Members' allocation of coalition `bits` and their outside options.
struct Split {
    members: Vec<usize>,
    values: Vec<f64>,
    outside: Vec<f64>,
    claims: Vec<f64>,
    feasible: bool,
}

fn members_of(bits: u64) -> Vec<usize> {
    (0..64).filter(|b| bits >> b & 1 == 1).collect()
}

fn subset_oracle<'v>(values: &'v dyn StructureValues) -> impl Fn(u64) -> Option<f64> + 'v {
    move |sub| values.coalition(sub).ok()
}

fn split(values: &dyn StructureValues, bits: u64, mechanism: Mechanism) -> Result<Split> {
    let members = members_of(bits);
    let outside = members
        .iter()
        .map(|&i| values.outside(bits & !(1 << i), i))
        .collect::<Result<Vec<_>>>()?;
    match mechanism {
        Mechanism::GammaCore => {
            let v = values.coalition(bits)?;
            let reduced = members
                .iter()
                .map(|&i| values.coalition(bits & !(1 << i)))
                .collect::<Result<Vec<_>>>()?;
            let alloc = gamma_core(v, &outside, &reduced);
            Ok(Split {
                members,
                values: alloc.values,
                outside,
                claims: alloc.claims,
                feasible: alloc.feasible,
            })
        }
        Mechanism::Shapley => {
            let alloc = shapley_on(bits, subset_oracle(values))?;
            Ok(Split {
                members,
                values: alloc.values,
                outside,
                claims: Vec::new(),
                feasible: true,
            })
        }
    }
}

/// Allocation region `j` would receive inside `bits ∪ {j}`.
fn joiner_value(values: &dyn StructureValues, bits: u64, j: usize, mechanism: Mechanism) -> Result<f64> {
    let joined = bits | 1 << j;
    match mechanism {
        Mechanism::GammaCore => {
            let s = split(values, joined, mechanism)?;
            let k = s.members.iter().position(|&i| i == j).expect("joiner present");
            if s.feasible {
                Ok(s.values[k])
            } else {
                // no admissible split: the joiner keeps its outside option
                Ok(s.outside[k])
            }
        }
        Mechanism::Shapley => shapley_member(joined, j as u32, subset_oracle(values)),
    }
}

fn internal_part(values: &dyn StructureValues, bits: u64, mechanism: Mechanism) -> Result<(bool, Split, Vec<(usize, f64)>)> {
    let s = split(values, bits, mechanism)?;
    let margins: Vec<(usize, f64)> = s
        .members
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let m = s.values[k] - s.outside[k];
            let m = if s.feasible { m } else { m.min(s.claims.get(k).copied().unwrap_or(m)) };
            (i, m)
        })
        .collect();
    let ok = s.feasible && margins.iter().all(|(_, m)| *m >= 0.0);
    Ok((ok, s, margins))
}

/// Internal and external stability of coalition `bits` (|bits| ≥ 2).
pub fn check_stability(
    values: &dyn StructureValues,
    bits: u64,
    mechanism: Mechanism,
) -> Result<StabilityReport> {
    let n = values.n();
    if bits.count_ones() < 2 {
        return Err(CoreError::InvalidParams(format!(
            "coalition {bits:#b} has fewer than two members"
        )));
    }
    let (internal_ok, s, internal_margins) = internal_part(values, bits, mechanism)?;
    let mut external_margins = Vec::new();
    for j in (0..n).filter(|j| bits >> j & 1 == 0) {
        let stay = values.outside(bits, j)?;
        let join = joiner_value(values, bits, j, mechanism)?;
        external_margins.push((j, stay - join));
    }
    let external_ok = external_margins.iter().all(|(_, m)| *m >= 0.0);
    Ok(StabilityReport {
        mask: CoalitionMask::from_bits(n, bits),
        internal_ok,
        external_ok,
        internal_margins,
        external_margins,
        allocation: s.members.iter().copied().zip(s.values.iter().copied()).collect(),
        feasible: s.feasible,
        aggregate_benefit: values.aggregate(bits)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Every stable coalition, ascending by mask.
    pub stable: Vec<StabilityReport>,
    /// Stable coalition with the largest aggregate benefit; `None` means non-cooperation.
    pub selected: Option<StabilityReport>,
    pub visited: usize,
}

/// Test all 2ⁿ − n − 1 coalitions and pick the stable one with the largest
/// aggregate benefit (ties: smallest mask).
pub fn stable_coalitions(values: &dyn StructureValues, mechanism: Mechanism) -> Result<ScanResult> {
    stable_coalitions_where(values, mechanism, |_| true)
}

/// As [`stable_coalitions`], restricted to masks accepted by `admit`.
pub fn stable_coalitions_where(
    values: &dyn StructureValues,
    mechanism: Mechanism,
    admit: impl Fn(u64) -> bool,
) -> Result<ScanResult> {
    let n = values.n();
    check_enumerable(n)?;
    let mut stable = Vec::new();
    let mut visited = 0;
    for bits in 0u64..1 << n {
        if bits.count_ones() < 2 || !admit(bits) {
            continue;
        }
        visited += 1;
        let (internal_ok, _, _) = internal_part(values, bits, mechanism)?;
        if !internal_ok {
            continue;
        }
        let report = check_stability(values, bits, mechanism)?;
        if report.is_stable() {
            stable.push(report);
        }
    }
    let selected = select(&stable);
    Ok(ScanResult {
        stable,
        selected,
        visited,
    })
}

/// Internally stable coalition among those accepted by `admit` with the
/// largest aggregate benefit. Used where no admitted coalition can be
/// externally stable, e.g. two-member coalitions in a dense world.
pub fn best_internally_stable(
    values: &dyn StructureValues,
    mechanism: Mechanism,
    admit: impl Fn(u64) -> bool,
) -> Result<Option<StabilityReport>> {
    let n = values.n();
    check_enumerable(n)?;
    let mut best: Option<StabilityReport> = None;
    for bits in 0u64..1 << n {
        if bits.count_ones() < 2 || !admit(bits) {
            continue;
        }
        let (internal_ok, _, _) = internal_part(values, bits, mechanism)?;
        if !internal_ok {
            continue;
        }
        let aggregate = values.aggregate(bits)?;
        if best.as_ref().is_none_or(|b| aggregate > b.aggregate_benefit) {
            best = Some(check_stability(values, bits, mechanism)?);
        }
    }
    Ok(best)
}

fn select(stable: &[StabilityReport]) -> Option<StabilityReport> {
    let mut best: Option<&StabilityReport> = None;
    for r in stable {
        match best {
            Some(b) if r.aggregate_benefit <= b.aggregate_benefit => {}
            _ => best = Some(r),
        }
    }
    best.cloned()
}

/// Ψ = V_grand − Σ W_{i, grand∖{i}} at grand-coalition rate `tau_bar`.
pub fn stability_gap(cache: &GameCache, tau_bar: f64, occurred: usize, t: f64) -> Result<f64> {
    Ok(gap_parts(cache, tau_bar, occurred, t)?.0)
}

/// (Ψ, V_grand)
fn gap_parts(cache: &GameCache, tau_bar: f64, occurred: usize, t: f64) -> Result<(f64, f64)> {
    let n = cache.params().n();
    let grand = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
    let v = cache
        .game_at(grand, tau_bar)?
        .coalition_value(occurred, t)?
        .expect("grand coalition present");
    let mut outside = 0.0;
    for i in 0..n {
        outside += cache
            .game_at(grand & !(1 << i), tau_bar)?
            .outsider_value(i, occurred, t)?;
    }
    Ok((v - outside, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSearch {
    pub t: f64,
    /// `None` when Ψ stays negative up to the ceiling.
    pub tau_hat: Option<f64>,
    pub gap_at_zero: f64,
    pub gap_at_hat: Option<f64>,
}

pub type TauPathPoint = TauSearch;

/// Smallest grand-coalition rate closing the stability gap: binary search
/// over the `step` grid (Ψ is nondecreasing in the rate), then bisection
/// inside the bracketing cell.
pub fn min_tau(
    cache: &GameCache,
    occurred: usize,
    t: f64,
    step: f64,
    ceiling: f64,
) -> Result<TauSearch> {
    if !(step > 0.0) || !(ceiling < 1.0) || !(ceiling >= step) {
        return Err(CoreError::InvalidParams(format!(
            "tau search needs 0 < step <= ceiling < 1 (step {step}, ceiling {ceiling})"
        )));
    }
    let psi = |tau: f64| gap_parts(cache, tau, occurred, t);
    let (gap0, v0) = psi(0.0)?;
    if gap0 >= 0.0 {
        return Ok(TauSearch {
            t,
            tau_hat: Some(0.0),
            gap_at_zero: gap0,
            gap_at_hat: Some(gap0),
        });
    }
    let cells = (ceiling / step + 1e-9).floor() as u64;
    let (gap_top, _) = psi(cells as f64 * step)?;
    if gap_top < 0.0 {
        return Ok(TauSearch {
            t,
            tau_hat: None,
            gap_at_zero: gap0,
            gap_at_hat: None,
        });
    }
    let (mut lo, mut hi) = (0u64, cells);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if psi(mid as f64 * step)?.0 >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut a = lo as f64 * step;
    let mut b = hi as f64 * step;
    let mut gap_b = psi(b)?.0;
    let tol = 1e-6 * v0.abs().max(1.0);
    for _ in 0..40 {
        if gap_b.abs() < tol {
            break;
        }
        let mid = 0.5 * (a + b);
        let g = psi(mid)?.0;
        if g >= 0.0 {
            b = mid;
            gap_b = g;
        } else {
            a = mid;
        }
    }
    Ok(TauSearch {
        t,
        tau_hat: Some(b),
        gap_at_zero: gap0,
        gap_at_hat: Some(gap_b),
    })
}

pub fn min_tau_path(
    cache: &GameCache,
    temperatures: &[f64],
    occurred: usize,
    step: f64,
    ceiling: f64,
) -> Result<Vec<TauPathPoint>> {
    temperatures
        .iter()
        .map(|&t| min_tau(cache, occurred, t, step, ceiling))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RegionParams;

    fn toy(n: usize, tau_bar: f64) -> GameCache {
        let mut params =
            ModelParams::homogeneous(RegionParams::new(6.0, 3.0, 0.0, 0.3, -0.1).with_losses(vec![0.1]), n)
                .with_events(vec![0.0035], vec![2.0]);
        params.tau_bar = tau_bar;
        GameCache::new(params).unwrap()
    }

    #[test]
    fn singletons_normalize_to_noncooperation() {
        assert_eq!(normalize(0b100), 0);
        assert_eq!(normalize(0b110), 0b110);
        let cache = toy(3, 0.05);
        let a = cache.game(0b010).unwrap();
        let b = cache.game(0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn scan_visits_all_admissible_masks() {
        let cache = toy(4, 0.05);
        let table = ValueTable::build(&cache, 0.05, 0, 1.5).unwrap();
        let scan = stable_coalitions(&table, Mechanism::GammaCore).unwrap();
        assert_eq!(scan.visited, 16 - 4 - 1);
        for r in &scan.stable {
            assert!(r.is_stable());
            assert_eq!(r.internal_ok, r.internal_margins.iter().all(|(_, m)| *m >= 0.0));
        }
    }

    #[test]
    fn lazy_and_dense_values_agree() {
        let cache = toy(4, 0.05);
        let table = ValueTable::build(&cache, 0.05, 0, 2.5).unwrap();
        let lazy = LazyValues::new(&cache, 0.05, 0, 2.5);
        for bits in 0u64..16 {
            assert_eq!(table.coalition(bits).unwrap(), lazy.coalition(bits).unwrap());
            for j in 0..4 {
                if bits.count_ones() < 2 || bits >> j & 1 == 0 {
                    assert_eq!(table.outside(bits, j).unwrap(), lazy.outside(bits, j).unwrap());
                }
            }
        }
        for mech in [Mechanism::GammaCore, Mechanism::Shapley] {
            let a = check_stability(&table, 0b0111, mech).unwrap();
            let b = check_stability(&lazy, 0b0111, mech).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn grand_coalition_has_no_external_test() {
        let cache = toy(3, 0.05);
        let lazy = LazyValues::new(&cache, 0.05, 1, 1.0);
        let r = check_stability(&lazy, 0b111, Mechanism::GammaCore).unwrap();
        assert!(r.external_ok && r.external_margins.is_empty());
        let total: f64 = r.allocation.iter().map(|(_, v)| v).sum();
        let v = lazy.coalition(0b111).unwrap();
        assert!((total - v).abs() <= 1e-8 * v.abs());
    }

    #[test]
    fn gap_is_nondecreasing_in_rate() {
        let cache = toy(4, 0.0);
        let mut last = f64::NEG_INFINITY;
        for k in 0..=10 {
            let g = stability_gap(&cache, 0.02 * k as f64, 1, 2.0).unwrap();
            assert!(g >= last - 1e-9);
            last = g;
        }
    }

    #[test]
    fn rejects_bad_search_settings() {
        let cache = toy(3, 0.0);
        assert!(min_tau(&cache, 0, 1.0, 0.0, 0.5).is_err());
        assert!(min_tau(&cache, 0, 1.0, 0.01, 1.0).is_err());
    }
}
