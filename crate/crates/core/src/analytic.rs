//! Closed-form quadratic value functions for stages without a pending hazard.
//!
//! With V = v₀ + v₁T + ½v₂T² for the coalition and likewise for each outsider,
//! the HJB system collapses to one scalar equation in the aggregate curvature
//! u₂ = Σ_p P_p·c2_p (P_p = Σ 1/(scale·β) over the player's regions). Every
//! other coefficient follows in closed form. The solver works in
//! σ = λ²u₂ − ½r, which stays finite when λ = 0.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{CoalitionMask, IncentiveMode, ModelParams, QuadraticValue, RegionParams};

/// Benefit multipliers and loss activation for one tipping stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub member_scale: f64,
    pub outsider_scale: f64,
    /// Number of realized events whose losses are charged.
    pub losses_active: usize,
}

impl StageSpec {
    pub fn new(member_scale: f64, outsider_scale: f64, losses_active: usize) -> Result<Self> {
        for s in [member_scale, outsider_scale] {
            if !(s > 0.0 && s < 2.0) {
                return Err(CoreError::InvalidParams(format!(
                    "benefit scale {s} outside (0, 2)"
                )));
            }
        }
        Ok(StageSpec {
            member_scale,
            outsider_scale,
            losses_active,
        })
    }

    /// Both scales equal to one.
    pub fn plain(losses_active: usize) -> Self {
        StageSpec {
            member_scale: 1.0,
            outsider_scale: 1.0,
            losses_active,
        }
    }

    /// Scales implied by an instrument applied at `rate`.
    pub fn with_rate(mode: IncentiveMode, rate: f64, losses_active: usize) -> Result<Self> {
        match mode {
            IncentiveMode::TechSharing => StageSpec::new(1.0 + rate, 1.0, losses_active),
            IncentiveMode::Sanction => StageSpec::new(1.0, 1.0 - rate, losses_active),
        }
    }

    /// Scales for `mask` at the coalition's own sharing rate.
    pub fn for_coalition(
        params: &ModelParams,
        mask: &CoalitionMask,
        losses_active: usize,
    ) -> Result<Self> {
        let rate = params.tau_for(mask)?;
        StageSpec::with_rate(params.incentive_mode, rate, losses_active)
    }

    pub fn scale(&self, is_member: bool) -> f64 {
        if is_member {
            self.member_scale
        } else {
            self.outsider_scale
        }
    }
}

/// Aggregated coefficients of one decision maker: the coalition (summed over
/// members) or a single outsider.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayerAggregate {
    /// P = Σ 1/(scale·β).
    pub weight: f64,
    pub rho: f64,
    pub eta: f64,
    /// Σ (scale·α²/(2β) + scale·ε).
    pub base: f64,
    /// Σ realized loss flows.
    pub loss: f64,
}

impl PlayerAggregate {
    fn accumulate(&mut self, p: &RegionParams, scale: f64, losses_active: usize) {
        self.weight += 1.0 / (scale * p.beta);
        self.rho += p.rho;
        self.eta += p.eta;
        self.base += scale * p.alpha * p.alpha / (2.0 * p.beta) + scale * p.epsilon;
        self.loss += p.realized_loss(losses_active);
    }

    fn zero() -> Self {
        PlayerAggregate {
            weight: 0.0,
            rho: 0.0,
            eta: 0.0,
            base: 0.0,
            loss: 0.0,
        }
    }

    /// Flow payoff at the optimal emissions given value slope `x`:
    /// base − loss − ½ρT² − ηT − ½λ²P x².
    pub fn optimized_flow(&self, t: f64, x: f64, lambda: f64) -> f64 {
        self.base - self.loss - 0.5 * self.rho * t * t - self.eta * t
            - 0.5 * lambda * lambda * self.weight * x * x
    }
}

/// Players of a coalition structure: the coalition (if nonempty) first, then
/// every outsider in region order.
#[derive(Debug, Clone)]
pub struct GameLayout {
    pub mask: CoalitionMask,
    pub spec: StageSpec,
    pub players: Vec<PlayerAggregate>,
    /// Region index of each outsider player (aligned with `players` after the coalition).
    pub outsider_regions: Vec<usize>,
    pub has_coalition: bool,
    /// A = Σ α/β over all regions.
    pub a_total: f64,
}

impl GameLayout {
    pub fn new(params: &ModelParams, mask: &CoalitionMask, spec: StageSpec) -> Self {
        let has_coalition = !mask.is_empty();
        let mut players = Vec::with_capacity(1 + params.n() - mask.len());
        if has_coalition {
            let mut agg = PlayerAggregate::zero();
            for i in mask.members() {
                agg.accumulate(&params.regions[i], spec.member_scale, spec.losses_active);
            }
            players.push(agg);
        }
        let mut outsider_regions = Vec::with_capacity(params.n() - mask.len());
        for j in mask.outsiders() {
            let mut agg = PlayerAggregate::zero();
            agg.accumulate(&params.regions[j], spec.outsider_scale, spec.losses_active);
            players.push(agg);
            outsider_regions.push(j);
        }
        GameLayout {
            mask: mask.clone(),
            spec,
            players,
            outsider_regions,
            has_coalition,
            a_total: params.aggregate_private_optimum(),
        }
    }

    /// Position in `players` of region `i`'s decision maker.
    pub fn player_of(&self, region: usize) -> usize {
        if self.mask.contains(region) {
            0
        } else {
            let offset = usize::from(self.has_coalition);
            offset
                + self
                    .outsider_regions
                    .binary_search(&region)
                    .expect("region is an outsider")
        }
    }

    /// Right-hand side of player `p`'s hazard-free HJB given every player's
    /// value slope `slopes` at temperature `t`.
    pub fn hjb_rhs(&self, p: usize, t: f64, slopes: &[f64], lambda: f64) -> f64 {
        let u_slope: f64 = self
            .players
            .iter()
            .zip(slopes)
            .map(|(q, x)| q.weight * x)
            .sum();
        let x = slopes[p];
        self.players[p].optimized_flow(t, x, lambda) + lambda * (self.a_total + lambda * u_slope) * x
    }
}

/// Which of two algebraic forms of the u₂ equation to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum U2Reading {
    /// 0 = (n−m)λ²u₂ − [½r(n−m+1) − Σ√Δ_p]
    #[default]
    Additive,
    /// 0 = (n−m)u₂λ²·[½r(n−m+1) − Σ√Δ_p]
    Multiplicative,
}

/// Post-tipping (hazard-free) equilibrium of one coalition structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticGameSolution {
    pub mask: CoalitionMask,
    pub spec: StageSpec,
    /// V for the coalition; `None` under full non-cooperation.
    pub coalition_value: Option<QuadraticValue>,
    /// W_j per region index; `None` for members.
    pub outsider_values: Vec<Option<QuadraticValue>>,
    /// σ = λ²u₂ − ½r.
    pub sigma: f64,
    /// λ²u₁.
    pub lambda2_u1: f64,
    pub u1: f64,
    pub u2: f64,
    /// A = Σ α/β.
    pub a_total: f64,
}

impl AnalyticGameSolution {
    /// Value function of region `i`'s decision maker (the coalition for members).
    pub fn player_value(&self, region: usize) -> QuadraticValue {
        if self.mask.contains(region) {
            self.coalition_value.expect("member implies coalition")
        } else {
            self.outsider_values[region].expect("outsider value present")
        }
    }

    /// Value functions in layout order (coalition first).
    pub fn layout_values(&self) -> Vec<QuadraticValue> {
        self.coalition_value
            .iter()
            .copied()
            .chain(self.outsider_values.iter().flatten().copied())
            .collect()
    }

    /// Shift every value by a constant loss annuity: used to re-use one
    /// solution across stages that differ only in the charged losses.
    pub fn with_losses(&self, params: &ModelParams, losses_active: usize) -> Self {
        let mut out = self.clone();
        let delta = |regions: &mut dyn Iterator<Item = usize>| -> f64 {
            regions
                .map(|i| {
                    let p = &params.regions[i];
                    p.realized_loss(self.spec.losses_active) - p.realized_loss(losses_active)
                })
                .sum::<f64>()
                / params.r
        };
        if let Some(v) = out.coalition_value.as_mut() {
            *v = v.shifted(delta(&mut self.mask.members()));
        }
        for (j, w) in out.outsider_values.iter_mut().enumerate() {
            if let Some(w) = w.as_mut() {
                *w = w.shifted(delta(&mut std::iter::once(j)));
            }
        }
        out.spec.losses_active = losses_active;
        out
    }
}

fn discriminant_offsets(layout: &GameLayout, lambda: f64) -> Vec<f64> {
    layout
        .players
        .iter()
        .map(|p| lambda * lambda * p.weight * p.rho)
        .collect()
}

/// Residual of the u₂ equation expressed in σ; `signs` picks the root branch
/// per player (+1 is the principal branch).
fn u2_equation(sigma: f64, r: f64, offsets: &[f64], signs: &[f64], reading: U2Reading) -> f64 {
    let k = offsets.len() as f64;
    let roots: f64 = offsets
        .iter()
        .zip(signs)
        .map(|(c, s)| s * (sigma * sigma - c).max(0.0).sqrt())
        .sum();
    match reading {
        U2Reading::Additive => (k - 1.0) * sigma - 0.5 * r + roots,
        U2Reading::Multiplicative => (k - 1.0) * (sigma + 0.5 * r) * (0.5 * r * k - roots),
    }
}

fn u2_equation_slope(sigma: f64, r: f64, offsets: &[f64], signs: &[f64]) -> f64 {
    let k = offsets.len() as f64;
    let _ = r;
    (k - 1.0)
        + offsets
            .iter()
            .zip(signs)
            .map(|(c, s)| {
                let d = (sigma * sigma - c).max(0.0).sqrt();
                if d > 0.0 {
                    s * sigma / d
                } else {
                    0.0
                }
            })
            .sum::<f64>()
}

/// Largest σ at which every discriminant σ² − λ²P_pρ_p is nonnegative on the
/// negative half-line.
fn sigma_ceiling(offsets: &[f64]) -> f64 {
    -offsets.iter().fold(0.0f64, |acc, c| acc.max(c.sqrt()))
}

/// Bracketed bisection with a Newton polish for the σ root of the u₂ equation.
fn solve_sigma(
    layout: &GameLayout,
    r: f64,
    lambda: f64,
    reading: U2Reading,
    signs: &[f64],
) -> Result<f64> {
    let offsets = discriminant_offsets(layout, lambda);
    let hi = sigma_ceiling(&offsets);
    let f = |s: f64| u2_equation(s, r, &offsets, signs, reading);
    let f_hi = f(hi);
    if f_hi == 0.0 {
        return Ok(hi);
    }
    // walk down until the sign flips
    let mut lo = hi - r.max(1e-12);
    let mut f_lo = f(lo);
    let mut steps = 0;
    while f_lo.signum() == f_hi.signum() {
        lo = hi - 2.0 * (hi - lo);
        f_lo = f(lo);
        steps += 1;
        if steps > 200 || !lo.is_finite() {
            return Err(CoreError::NoEquilibrium {
                lo,
                hi,
                detail: format!("equation keeps sign {} over the bracket", f_hi.signum()),
            });
        }
    }
    let (mut a, mut b) = (lo, hi);
    let mut fa = f_lo;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs()) {
            break;
        }
    }
    let mut root = 0.5 * (a + b);
    if reading == U2Reading::Additive {
        for _ in 0..4 {
            let slope = u2_equation_slope(root, r, &offsets, signs);
            if slope == 0.0 || !slope.is_finite() {
                break;
            }
            let next = root - f(root) / slope;
            if !(next >= a.min(b) - 1e-15 && next <= a.max(b) + 1e-15) {
                break;
            }
            root = next.min(hi);
        }
    }
    Ok(root)
}

/// λ²u₂ − ½r root for structure `mask`, returned as u₂.
pub fn solve_u2(mask: &CoalitionMask, spec: StageSpec, params: &ModelParams) -> Result<f64> {
    let layout = GameLayout::new(params, mask, spec);
    let signs = vec![1.0; layout.players.len()];
    let sigma = solve_sigma(&layout, params.r, params.lambda, U2Reading::Additive, &signs)?;
    Ok(u2_from_sigma(sigma, params.r, params.lambda))
}

fn u2_from_sigma(sigma: f64, r: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        (sigma + 0.5 * r) / (lambda * lambda)
    }
}

/// Second-order coefficient of a player for branch sign `s`:
/// (σ + s√Δ)/(λ²P) written as ρ/(σ − s√Δ) to avoid cancellation.
fn curvature(sigma: f64, offset: f64, rho: f64, sign: f64) -> f64 {
    if rho == 0.0 {
        return if sign > 0.0 {
            0.0
        } else {
            // second root 2σ/(λ²P) has no ρ-form; caller never needs it with ρ = 0
            f64::NAN
        };
    }
    let d = (sigma * sigma - offset).max(0.0).sqrt();
    rho / (sigma - sign * d)
}

/// Solve every coefficient of the structure in closed form.
pub fn solve_post_tipping(
    mask: &CoalitionMask,
    spec: StageSpec,
    params: &ModelParams,
) -> Result<AnalyticGameSolution> {
    solve_post_tipping_with(mask, spec, params, U2Reading::Additive)
}

pub fn solve_post_tipping_with(
    mask: &CoalitionMask,
    spec: StageSpec,
    params: &ModelParams,
    reading: U2Reading,
) -> Result<AnalyticGameSolution> {
    let layout = GameLayout::new(params, mask, spec);
    solve_layout(&layout, params, reading)
}

pub(crate) fn solve_layout(
    layout: &GameLayout,
    params: &ModelParams,
    reading: U2Reading,
) -> Result<AnalyticGameSolution> {
    let np = layout.players.len();
    let plus = vec![1.0; np];
    let attempt = solve_with_signs(layout, params, reading, &plus)?;
    let concave = layout
        .players
        .iter()
        .zip(attempt.layout_values())
        .all(|(p, v)| p.rho == 0.0 || v.c2 < 0.0);
    if concave {
        return Ok(attempt);
    }
    let minus = vec![-1.0; np];
    let fallback = solve_with_signs(layout, params, reading, &minus)?;
    let concave = fallback.layout_values().iter().all(|v| v.c2 < 0.0);
    if concave {
        Ok(fallback)
    } else {
        Err(CoreError::NoEquilibrium {
            lo: f64::NEG_INFINITY,
            hi: fallback.sigma,
            detail: "neither root branch yields concave value functions".into(),
        })
    }
}

fn solve_with_signs(
    layout: &GameLayout,
    params: &ModelParams,
    reading: U2Reading,
    signs: &[f64],
) -> Result<AnalyticGameSolution> {
    let r = params.r;
    let lambda = params.lambda;
    let l2 = lambda * lambda;
    let sigma = solve_sigma(layout, r, lambda, reading, signs)?;
    let offsets = discriminant_offsets(layout, lambda);
    let a = layout.a_total;

    let c2: Vec<f64> = layout
        .players
        .iter()
        .zip(&offsets)
        .zip(signs)
        .map(|((p, &c), &s)| curvature(sigma, c, p.rho, s))
        .collect();
    if c2.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NoEquilibrium {
            lo: f64::NEG_INFINITY,
            hi: sigma,
            detail: "non-finite curvature".into(),
        });
    }
    // d_p = r + λ²P_p c2_p − λ²u₂
    let denom: Vec<f64> = layout
        .players
        .iter()
        .zip(&c2)
        .map(|(p, &v2)| 0.5 * r + l2 * p.weight * v2 - sigma)
        .collect();
    let mut num = 0.0;
    let mut feedback = 0.0;
    for ((p, &v2), &d) in layout.players.iter().zip(&c2).zip(&denom) {
        num += p.weight * (lambda * a * v2 - p.eta) / d;
        feedback += l2 * p.weight * v2 / d;
    }
    let u1 = num / (1.0 - feedback);
    let lambda2_u1 = l2 * u1;
    let drift = lambda2_u1 + lambda * a;

    let mut values = Vec::with_capacity(np_of(layout));
    for ((p, &v2), &d) in layout.players.iter().zip(&c2).zip(&denom) {
        let v1 = (drift * v2 - p.eta) / d;
        let v0 = (p.base - p.loss - 0.5 * l2 * p.weight * v1 * v1 + drift * v1) / r;
        values.push(QuadraticValue::new(v0, v1, v2));
    }

    let n = layout.mask.n();
    let mut outsider_values = vec![None; n];
    let offset = usize::from(layout.has_coalition);
    for (k, &j) in layout.outsider_regions.iter().enumerate() {
        outsider_values[j] = Some(values[offset + k]);
    }
    Ok(AnalyticGameSolution {
        mask: layout.mask.clone(),
        spec: layout.spec,
        coalition_value: layout.has_coalition.then(|| values[0]),
        outsider_values,
        sigma,
        lambda2_u1,
        u1,
        u2: u2_from_sigma(sigma, r, lambda),
        a_total: a,
    })
}

fn np_of(layout: &GameLayout) -> usize {
    layout.players.len()
}

/// Relative HJB residual |rV − RHS| / max(1, |rV|) per player at `t`.
pub fn hjb_residuals(
    solution: &AnalyticGameSolution,
    params: &ModelParams,
    t: f64,
) -> Vec<f64> {
    let layout = GameLayout::new(params, &solution.mask, solution.spec);
    let values = solution.layout_values();
    let slopes: Vec<f64> = values.iter().map(|v| v.derivative(t)).collect();
    values
        .iter()
        .enumerate()
        .map(|(p, v)| {
            let lhs = params.r * v.value(t);
            let rhs = layout.hjb_rhs(p, t, &slopes, params.lambda);
            (lhs - rhs).abs() / lhs.abs().max(1.0)
        })
        .collect()
}

/// Markov emission rule q = α/β + λV′(T)/(scale·β).
pub fn emission_rule(region: &RegionParams, slope: f64, scale: f64, lambda: f64) -> f64 {
    (region.alpha + lambda * slope / scale) / region.beta
}

/// Optimal emissions of region `region_index` at `t` under `solution`.
pub fn optimal_emission(
    region_index: usize,
    solution: &AnalyticGameSolution,
    t: f64,
    params: &ModelParams,
) -> f64 {
    let is_member = solution.mask.contains(region_index);
    let value = solution.player_value(region_index);
    emission_rule(
        &params.regions[region_index],
        value.derivative(t),
        solution.spec.scale(is_member),
        params.lambda,
    )
}

/// Outcome of the single-outsider existence/uniqueness scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// Sign changes of F(v₂) over the scanned negative half-line.
    pub f_roots: usize,
    /// Sign changes of G(w_{j,2}).
    pub g_roots: usize,
    pub f_at_zero: f64,
    pub g_at_zero: f64,
    /// Valid sign changes of the u₂ equation on the dense u₂ grid.
    pub u2_roots: usize,
    /// Scanned lower end of the v₂ / w₂ grids.
    pub scan_floor: f64,
}

/// Quartic in v₂ whose negative roots are the coalition curvatures of a
/// single-outsider game.
#[derive(Debug, Clone, Copy)]
pub struct SingleOutsiderQuartics {
    /// P_I = 1/((1+τ)β_I) with 1/β_I = Σ 1/β_i.
    pub weight_members: f64,
    /// p_j = 1/β_j (scaled).
    pub weight_outsider: f64,
    pub rho_members: f64,
    pub rho_outsider: f64,
    pub r: f64,
    pub lambda: f64,
}

impl SingleOutsiderQuartics {
    pub fn new(mask: &CoalitionMask, spec: StageSpec, params: &ModelParams) -> Result<Self> {
        if mask.n() - mask.len() != 1 || mask.is_empty() {
            return Err(CoreError::InvalidParams(
                "uniqueness scan needs exactly one non-member and a nonempty coalition".into(),
            ));
        }
        let layout = GameLayout::new(params, mask, spec);
        Ok(SingleOutsiderQuartics {
            weight_members: layout.players[0].weight,
            weight_outsider: layout.players[1].weight,
            rho_members: layout.players[0].rho,
            rho_outsider: layout.players[1].rho,
            r: params.r,
            lambda: params.lambda,
        })
    }

    fn quartic(&self, v: f64, own_w: f64, own_rho: f64, other_w: f64, other_rho: f64) -> f64 {
        let l2 = self.lambda * self.lambda;
        let r = self.r;
        -3.0 * l2 * own_w * own_w / (8.0 * other_w) * v.powi(4)
            + r * own_w / (2.0 * other_w) * v.powi(3)
            + (-r * r / (8.0 * l2 * other_w) + own_w * own_rho / (4.0 * other_w) - other_rho / 2.0)
                * v
                * v
            + own_rho * own_rho / (8.0 * l2 * other_w)
    }

    /// F(v₂).
    pub fn f(&self, v2: f64) -> f64 {
        self.quartic(
            v2,
            self.weight_members,
            self.rho_members,
            self.weight_outsider,
            self.rho_outsider,
        )
    }

    /// G(w_{j,2}).
    pub fn g(&self, w2: f64) -> f64 {
        self.quartic(
            w2,
            self.weight_outsider,
            self.rho_outsider,
            self.weight_members,
            self.rho_members,
        )
    }
}

fn sign_changes(values: impl Iterator<Item = f64>) -> usize {
    let mut count = 0;
    let mut last: Option<f64> = None;
    for v in values {
        if !v.is_finite() || v == 0.0 {
            continue;
        }
        if let Some(prev) = last {
            if prev.signum() != v.signum() {
                count += 1;
            }
        }
        last = Some(v);
    }
    count
}

/// Count valid sign changes of the additive u₂ equation over a uniform grid
/// of `points` values in `(lo, hi)`; grid points whose discriminants are
/// negative are skipped.
pub fn scan_u2_roots(
    mask: &CoalitionMask,
    spec: StageSpec,
    params: &ModelParams,
    lo: f64,
    hi: f64,
    points: usize,
) -> usize {
    let layout = GameLayout::new(params, mask, spec);
    let offsets = discriminant_offsets(&layout, params.lambda);
    let signs = vec![1.0; offsets.len()];
    let l2 = params.lambda * params.lambda;
    let values = (1..points).map(|i| {
        let u2 = lo + (hi - lo) * i as f64 / points as f64;
        let sigma = l2 * u2 - 0.5 * params.r;
        let valid = sigma < 0.0 && offsets.iter().all(|c| sigma * sigma >= *c);
        if valid {
            u2_equation(sigma, params.r, &offsets, &signs, U2Reading::Additive)
        } else {
            f64::NAN
        }
    });
    sign_changes(values)
}

/// Dense scans of F, G (single outsider) and of the u₂ equation.
pub fn uniqueness_scan(
    mask: &CoalitionMask,
    spec: StageSpec,
    params: &ModelParams,
) -> Result<UniquenessReport> {
    let quartics = SingleOutsiderQuartics::new(mask, spec, params)?;
    let solution = solve_post_tipping(mask, spec, params)?;
    let v2 = solution.coalition_value.map(|v| v.c2).unwrap_or(-1.0);
    let w2 = solution
        .outsider_values
        .iter()
        .flatten()
        .map(|w| w.c2)
        .next()
        .unwrap_or(-1.0);
    let floor = -1e3 * v2.abs().max(w2.abs()).max(1.0);
    // log-spaced grid resolves roots near zero and far out alike
    let grid: Vec<f64> = (0..=40_000)
        .map(|i| {
            let e = -12.0 + (floor.abs().log10() + 12.0) * i as f64 / 40_000.0;
            -(10f64.powf(e))
        })
        .collect();
    let f_roots = sign_changes(
        std::iter::once(quartics.f(0.0)).chain(grid.iter().map(|&v| quartics.f(v))),
    );
    let g_roots = sign_changes(
        std::iter::once(quartics.g(0.0)).chain(grid.iter().map(|&v| quartics.g(v))),
    );
    let u2_hi = 0.5 * params.r / (params.lambda * params.lambda);
    let u2_roots = scan_u2_roots(mask, spec, params, -1e6, u2_hi, 10_000);
    Ok(UniquenessReport {
        f_roots,
        g_roots,
        f_at_zero: quartics.f(0.0),
        g_at_zero: quartics.g(0.0),
        u2_roots,
        scan_floor: floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_regions() -> ModelParams {
        let regions = vec![
            RegionParams::new(14.13, 8.02, 0.0, 0.254, -0.152).with_losses(vec![0.2]),
            RegionParams::new(23.52, 21.21, 0.0, 0.331, -0.178).with_losses(vec![0.3]),
            RegionParams::new(4.90, 1.96, 0.0, 0.662, -0.412).with_losses(vec![0.1]),
        ];
        let names = vec!["A".into(), "B".into(), "C".into()];
        let mut p = ModelParams::new(names, regions);
        p.tau_bar = 0.05;
        p
    }

    #[test]
    fn residuals_vanish_for_every_structure() {
        let params = three_regions();
        for bits in [0u64, 0b011, 0b101, 0b110, 0b111] {
            let mask = CoalitionMask::from_bits(3, bits);
            let spec = StageSpec::for_coalition(&params, &mask, 1).unwrap();
            let sol = solve_post_tipping(&mask, spec, &params).unwrap();
            for k in 0..50 {
                let t = 6.0 * k as f64 / 49.0;
                for r in hjb_residuals(&sol, &params, t) {
                    assert!(r < 1e-10, "mask {bits:b} T={t} residual {r}");
                }
            }
            for v in sol.layout_values() {
                assert!(v.c2 < 0.0);
            }
            assert!(sol.sigma < 0.0);
        }
    }

    #[test]
    fn zero_lambda_gives_private_optimum() {
        let mut params = three_regions();
        params.lambda = 0.0;
        let mask = CoalitionMask::from_bits(3, 0b011);
        let spec = StageSpec::plain(0);
        let sol = solve_post_tipping(&mask, spec, &params).unwrap();
        for i in 0..3 {
            let q = optimal_emission(i, &sol, 1.7, &params);
            let expected = params.regions[i].private_optimum();
            assert!((q - expected).abs() < 1e-14);
        }
        // T constant: V = ∫e^{-rt}(−½ρT² − ηT + θ*) ⇒ v2 = −ρ/r
        let v = sol.coalition_value.unwrap();
        let rho: f64 = params.regions[..2].iter().map(|p| p.rho).sum();
        assert!((v.c2 + rho / params.r).abs() < 1e-12);
    }

    #[test]
    fn emission_slope_matches_curvature() {
        let params = three_regions();
        let mask = CoalitionMask::from_bits(3, 0b101);
        let spec = StageSpec::for_coalition(&params, &mask, 0).unwrap();
        let sol = solve_post_tipping(&mask, spec, &params).unwrap();
        for i in 0..3 {
            let slope = optimal_emission(i, &sol, 2.0, &params) - optimal_emission(i, &sol, 1.0, &params);
            let member = mask.contains(i);
            let expected = params.lambda * sol.player_value(i).c2
                / (spec.scale(member) * params.regions[i].beta);
            assert!((slope - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_coalition_matches_noncooperation() {
        let params = three_regions();
        let spec = StageSpec::plain(0);
        let none = solve_u2(&CoalitionMask::empty(3), spec, &params).unwrap();
        let single = solve_u2(&CoalitionMask::from_members(3, &[1]), spec, &params).unwrap();
        assert!((none - single).abs() < 1e-9 * none.abs());
    }

    #[test]
    fn multiplicative_reading_fails_residual_check() {
        let params = three_regions();
        let mask = CoalitionMask::from_bits(3, 0b011);
        let spec = StageSpec::plain(1);
        let sol = solve_post_tipping_with(&mask, spec, &params, U2Reading::Multiplicative);
        if let Ok(sol) = sol {
            let worst = hjb_residuals(&sol, &params, 1.0)
                .into_iter()
                .fold(0.0, f64::max);
            assert!(worst > 1e-6, "multiplicative reading unexpectedly solved the HJB");
        }
    }

    #[test]
    fn loss_shift_matches_fresh_solve() {
        let params = three_regions();
        let mask = CoalitionMask::from_bits(3, 0b110);
        let base = solve_post_tipping(&mask, StageSpec::plain(0), &params).unwrap();
        let shifted = base.with_losses(&params, 1);
        let fresh = solve_post_tipping(&mask, StageSpec::plain(1), &params).unwrap();
        for (a, b) in shifted.layout_values().iter().zip(fresh.layout_values()) {
            assert!((a.c0 - b.c0).abs() < 1e-9 * b.c0.abs().max(1.0));
            assert_eq!(a.c1, b.c1);
        }
    }

    #[test]
    fn quartic_endpoints() {
        let params = three_regions();
        let mask = CoalitionMask::from_bits(3, 0b011);
        let spec = StageSpec::for_coalition(&params, &mask, 0).unwrap();
        let q = SingleOutsiderQuartics::new(&mask, spec, &params).unwrap();
        let rho_i = 0.254 + 0.331;
        let expected = 1.96 * rho_i * rho_i / (8.0 * params.lambda * params.lambda);
        assert!((q.f(0.0) - expected).abs() < 1e-9 * expected);
        assert!(q.f(-1e9) < 0.0 && q.g(-1e9) < 0.0);
        let report = uniqueness_scan(&mask, spec, &params).unwrap();
        assert_eq!(report.f_roots, 1);
        assert_eq!(report.g_roots, 1);
        assert_eq!(report.u2_roots, 1);
    }

    #[test]
    fn rejects_scales_outside_range() {
        assert!(StageSpec::new(2.0, 1.0, 0).is_err());
        assert!(StageSpec::new(1.0, 0.0, 0).is_err());
    }
}
