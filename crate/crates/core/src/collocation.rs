//! Pre-tipping stages: the hazard-coupled HJB system above a threshold,
//! solved by Chebyshev collocation and chained onto the analytic solutions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analytic::{
    emission_rule, solve_post_tipping_with, AnalyticGameSolution, GameLayout, StageSpec, U2Reading,
};
use crate::chebyshev::{basis, cheb_fit, cheb_nodes, ChebyshevExpansion};
use crate::error::{CoreError, Result};
use crate::types::{hazard, CoalitionMask, ModelParams, QuadraticValue};

/// Numerical settings for the pre-tipping solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Newton stops once every node residual is below this (absolute).
    pub residual_tol: f64,
    /// Residual level a solve must reach to be accepted.
    pub accept_tol: f64,
    pub max_iterations: usize,
    /// Relative value gap allowed between the two pieces at the threshold;
    /// `None` records the gap without failing.
    pub boundary_tolerance: Option<f64>,
    pub reading: U2Reading,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            residual_tol: 1e-11,
            accept_tol: 1e-9,
            max_iterations: 60,
            boundary_tolerance: None,
            reading: U2Reading::Additive,
        }
    }
}

/// Quadratic below `threshold`, Chebyshev expansion on [threshold, T̄].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseValue {
    pub threshold: f64,
    pub below: QuadraticValue,
    pub above: ChebyshevExpansion,
    /// |above(T̲) − below(T̲)| / max(1, |below(T̲)|)
    pub boundary_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValueFunction {
    Quadratic(QuadraticValue),
    Piecewise(PiecewiseValue),
}

impl ValueFunction {
    fn piece_check(p: &PiecewiseValue, t: f64) -> Result<()> {
        if t > p.above.hi * (1.0 + 1e-12) {
            Err(CoreError::DomainExceeded {
                t,
                t_max: p.above.hi,
            })
        } else {
            Ok(())
        }
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        match self {
            ValueFunction::Quadratic(q) => Ok(q.value(t)),
            ValueFunction::Piecewise(p) => {
                if t <= p.threshold {
                    Ok(p.below.value(t))
                } else {
                    Self::piece_check(p, t)?;
                    Ok(p.above.value(t))
                }
            }
        }
    }

    pub fn derivative(&self, t: f64) -> Result<f64> {
        match self {
            ValueFunction::Quadratic(q) => Ok(q.derivative(t)),
            ValueFunction::Piecewise(p) => {
                if t <= p.threshold {
                    Ok(p.below.derivative(t))
                } else {
                    Self::piece_check(p, t)?;
                    Ok(p.above.derivative(t))
                }
            }
        }
    }

    pub fn boundary_gap(&self) -> f64 {
        match self {
            ValueFunction::Quadratic(_) => 0.0,
            ValueFunction::Piecewise(p) => p.boundary_gap,
        }
    }
}

/// Value functions of every player in one tipping state, in layout order
/// (coalition first, then outsiders by region index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSolution {
    pub spec: StageSpec,
    pub values: Vec<ValueFunction>,
    /// Largest absolute collocation residual (0 for analytic stages).
    pub max_node_residual: f64,
    pub newton_iterations: usize,
}

impl StageSolution {
    pub fn max_boundary_gap(&self) -> f64 {
        self.values
            .iter()
            .map(ValueFunction::boundary_gap)
            .fold(0.0, f64::max)
    }
}

/// One pending tipping event seen from a stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingEvent {
    pub chi: f64,
    pub threshold: f64,
}

struct CollocationSystem<'a> {
    layout: &'a GameLayout,
    r: f64,
    lambda: f64,
    chi: f64,
    nodes: Vec<f64>,
    hazards: Vec<f64>,
    phi: Vec<Vec<f64>>,
    dphi: Vec<Vec<f64>>,
    downstream: Vec<Vec<f64>>,
    k1: usize,
}

impl<'a> CollocationSystem<'a> {
    fn new(
        layout: &'a GameLayout,
        params: &ModelParams,
        event: PendingEvent,
        downstream: &[ValueFunction],
    ) -> Result<Self> {
        let k = params.cheb_degree;
        let lo = event.threshold;
        let hi = params.t_domain_max;
        let nodes = cheb_nodes(k, lo, hi)?;
        let scale = 2.0 / (hi - lo);
        let mut phi = Vec::with_capacity(k + 1);
        let mut dphi = Vec::with_capacity(k + 1);
        for &t in &nodes {
            let (p, d) = basis(k, (2.0 * t - lo - hi) / (hi - lo));
            phi.push(p);
            dphi.push(d.into_iter().map(|v| v * scale).collect());
        }
        let downstream = downstream
            .iter()
            .map(|f| nodes.iter().map(|&t| f.value(t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut system = CollocationSystem {
            layout,
            r: params.r,
            lambda: params.lambda,
            chi: event.chi,
            hazards: Vec::new(),
            nodes,
            phi,
            dphi,
            downstream,
            k1: k + 1,
        };
        system.set_chi(event.chi, event.threshold);
        Ok(system)
    }

    fn set_chi(&mut self, chi: f64, threshold: f64) {
        self.chi = chi;
        self.hazards = self.nodes.iter().map(|&t| hazard(t, chi, threshold)).collect();
    }

    fn unknowns(&self) -> usize {
        self.layout.players.len() * self.k1
    }

    /// Node values and slopes per player.
    fn evaluate(&self, c: &DVector<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let np = self.layout.players.len();
        let mut vals = vec![vec![0.0; self.k1]; np];
        let mut slopes = vec![vec![0.0; self.k1]; np];
        for p in 0..np {
            let coeffs = &c.as_slice()[p * self.k1..(p + 1) * self.k1];
            for d in 0..self.k1 {
                vals[p][d] = self.phi[d].iter().zip(coeffs).map(|(a, b)| a * b).sum();
                slopes[p][d] = self.dphi[d].iter().zip(coeffs).map(|(a, b)| a * b).sum();
            }
        }
        (vals, slopes)
    }

    /// −(r + H)V + RHS + H·V_next at every node.
    fn residual(&self, c: &DVector<f64>) -> DVector<f64> {
        let np = self.layout.players.len();
        let (vals, slopes) = self.evaluate(c);
        let mut out = DVector::zeros(self.unknowns());
        let mut x = vec![0.0; np];
        for d in 0..self.k1 {
            let t = self.nodes[d];
            let h = self.hazards[d];
            for p in 0..np {
                x[p] = slopes[p][d];
            }
            for p in 0..np {
                let rhs = self.layout.hjb_rhs(p, t, &x, self.lambda);
                out[p * self.k1 + d] =
                    -(self.r + h) * vals[p][d] + rhs + h * self.downstream[p][d];
            }
        }
        out
    }

    fn jacobian(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let np = self.layout.players.len();
        let n = self.unknowns();
        let (_, slopes) = self.evaluate(c);
        let l = self.lambda;
        let mut jac = DMatrix::zeros(n, n);
        for d in 0..self.k1 {
            let h = self.hazards[d];
            let u_slope: f64 = (0..np)
                .map(|q| self.layout.players[q].weight * slopes[q][d])
                .sum();
            let drift = l * self.layout.a_total + l * l * u_slope;
            for p in 0..np {
                let row = p * self.k1 + d;
                let xp = slopes[p][d];
                for q in 0..np {
                    let cross = l * l * xp * self.layout.players[q].weight;
                    for k in 0..self.k1 {
                        jac[(row, q * self.k1 + k)] = if p == q {
                            -(self.r + h) * self.phi[d][k] + drift * self.dphi[d][k]
                        } else {
                            cross * self.dphi[d][k]
                        };
                    }
                }
            }
        }
        jac
    }

    fn newton(&self, mut c: DVector<f64>, options: &SolverOptions) -> (DVector<f64>, f64, usize) {
        let mut res = self.residual(&c);
        let mut norm = res.amax();
        let mut iterations = 0;
        while norm > options.residual_tol && iterations < options.max_iterations {
            iterations += 1;
            let jac = self.jacobian(&c);
            let step = match jac.lu().solve(&(-&res)) {
                Some(s) => s,
                None => break,
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = &c + &step * alpha;
                let trial_res = self.residual(&trial);
                let trial_norm = trial_res.amax();
                if trial_norm.is_finite() && trial_norm < norm {
                    c = trial;
                    res = trial_res;
                    norm = trial_norm;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (c, norm, iterations)
    }

    fn node_breakdown(&self, c: &DVector<f64>) -> Vec<f64> {
        let res = self.residual(c);
        let np = self.layout.players.len();
        (0..self.k1)
            .map(|d| {
                (0..np)
                    .map(|p| res[p * self.k1 + d].abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Solve one pre-tipping stage: the analytic quadratics `below` hold under
/// the threshold, and collocation on [T̲, T̄] couples to `downstream` (the
/// state after the pending event) through the hazard.
pub fn solve_pre_tipping_stage(
    layout: &GameLayout,
    params: &ModelParams,
    below: &[QuadraticValue],
    downstream: &[ValueFunction],
    event: PendingEvent,
    options: &SolverOptions,
) -> Result<StageSolution> {
    let np = layout.players.len();
    if below.len() != np || downstream.len() != np {
        return Err(CoreError::InvalidParams(format!(
            "stage has {np} players but {} boundary and {} downstream values",
            below.len(),
            downstream.len()
        )));
    }
    if !(event.threshold < params.t_domain_max) {
        return Err(CoreError::InvalidParams(format!(
            "threshold {} not below domain bound {}",
            event.threshold, params.t_domain_max
        )));
    }
    let mut system = CollocationSystem::new(layout, params, event, downstream)?;
    let k1 = system.k1;
    let mut guess = DVector::zeros(np * k1);
    for (p, q) in below.iter().enumerate() {
        let samples: Vec<f64> = system.nodes.iter().map(|&t| q.value(t)).collect();
        for (k, a) in cheb_fit(&samples).into_iter().enumerate() {
            guess[p * k1 + k] = a;
        }
    }

    let (mut c, mut norm, mut iterations) = system.newton(guess.clone(), options);
    if norm > options.accept_tol {
        // hazard homotopy from the exact χ = 0 start
        log::debug!("collocation residual {norm:e}; retrying with hazard homotopy");
        let mut current = guess;
        let mut total = 0;
        for fraction in [0.25, 0.5, 1.0] {
            system.set_chi(event.chi * fraction, event.threshold);
            let (next, n, it) = system.newton(current, options);
            current = next;
            norm = n;
            total += it;
        }
        c = current;
        iterations = total;
    }
    if !(norm <= options.accept_tol) {
        return Err(CoreError::CollocationDiverged {
            iterations,
            residual_norm: norm,
            node_residuals: system.node_breakdown(&c),
        });
    }

    let mut values = Vec::with_capacity(np);
    let mut worst_gap: f64 = 0.0;
    for (p, q) in below.iter().enumerate() {
        let above = ChebyshevExpansion::new(
            event.threshold,
            params.t_domain_max,
            c.as_slice()[p * k1..(p + 1) * k1].to_vec(),
        )?;
        let edge = q.value(event.threshold);
        let gap = (above.value(event.threshold) - edge).abs() / edge.abs().max(1.0);
        worst_gap = worst_gap.max(gap);
        values.push(ValueFunction::Piecewise(PiecewiseValue {
            threshold: event.threshold,
            below: *q,
            above,
            boundary_gap: gap,
        }));
    }
    if let Some(tol) = options.boundary_tolerance {
        if worst_gap > tol {
            return Err(CoreError::BoundaryMismatch {
                threshold: event.threshold,
                relative: worst_gap,
                tolerance: tol,
            });
        }
    }
    Ok(StageSolution {
        spec: layout.spec,
        values,
        max_node_residual: norm,
        newton_iterations: iterations,
    })
}

/// Absolute stage residual of every player at temperature `t`, using the
/// hazard of `event` and the downstream values.
pub fn stage_residuals(
    layout: &GameLayout,
    params: &ModelParams,
    values: &[ValueFunction],
    downstream: &[ValueFunction],
    event: PendingEvent,
    t: f64,
) -> Result<Vec<f64>> {
    let slopes = values
        .iter()
        .map(|v| v.derivative(t))
        .collect::<Result<Vec<_>>>()?;
    let h = hazard(t, event.chi, event.threshold);
    let mut out = Vec::with_capacity(values.len());
    for (p, v) in values.iter().enumerate() {
        let rhs = layout.hjb_rhs(p, t, &slopes, params.lambda);
        out.push((-(params.r + h) * v.value(t)? + rhs + h * downstream[p].value(t)?).abs());
    }
    Ok(out)
}

/// Every tipping state of one coalition structure. `stages[k]` holds the
/// solution once `k` events have realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub mask: CoalitionMask,
    /// Instrument rate in force (τ or τ₂).
    pub rate: f64,
    pub has_coalition: bool,
    pub outsider_regions: Vec<usize>,
    pub stages: Vec<StageSolution>,
    /// Hazard-free solution with no losses charged.
    pub base: AnalyticGameSolution,
    pub t_domain_max: f64,
}

impl GameSolution {
    /// Layout position of the player that decides for region `i`.
    pub fn player_of(&self, region: usize) -> usize {
        if self.mask.contains(region) {
            0
        } else {
            usize::from(self.has_coalition)
                + self
                    .outsider_regions
                    .binary_search(&region)
                    .expect("region is an outsider")
        }
    }

    fn stage(&self, occurred: usize) -> Result<&StageSolution> {
        self.stages.get(occurred).ok_or_else(|| {
            CoreError::InvalidParams(format!(
                "tipping state {occurred} outside 0..={}",
                self.stages.len() - 1
            ))
        })
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if t > self.t_domain_max * (1.0 + 1e-12) {
            Err(CoreError::DomainExceeded {
                t,
                t_max: self.t_domain_max,
            })
        } else {
            Ok(())
        }
    }

    pub fn player_value(&self, player: usize, occurred: usize, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        self.stage(occurred)?.values[player].value(t)
    }

    /// V of the coalition, or `None` under non-cooperation.
    pub fn coalition_value(&self, occurred: usize, t: f64) -> Result<Option<f64>> {
        if self.has_coalition {
            self.player_value(0, occurred, t).map(Some)
        } else {
            Ok(None)
        }
    }

    /// W_j for outsider `j`.
    pub fn outsider_value(&self, region: usize, occurred: usize, t: f64) -> Result<f64> {
        debug_assert!(!self.mask.contains(region));
        self.player_value(self.player_of(region), occurred, t)
    }

    pub fn emission(&self, region: usize, occurred: usize, t: f64, params: &ModelParams) -> Result<f64> {
        self.check_domain(t)?;
        let stage = self.stage(occurred)?;
        let member = self.mask.contains(region);
        let slope = stage.values[self.player_of(region)].derivative(t)?;
        Ok(emission_rule(
            &params.regions[region],
            slope,
            stage.spec.scale(member),
            params.lambda,
        ))
    }

    pub fn emissions(&self, occurred: usize, t: f64, params: &ModelParams) -> Result<Vec<f64>> {
        (0..params.n())
            .map(|i| self.emission(i, occurred, t, params))
            .collect()
    }

    /// Sum of every player's value.
    pub fn total_value(&self, occurred: usize, t: f64) -> Result<f64> {
        let stage = self.stage(occurred)?;
        self.check_domain(t)?;
        stage.values.iter().map(|v| v.value(t)).sum()
    }

    pub fn max_node_residual(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| s.max_node_residual)
            .fold(0.0, f64::max)
    }

    /// Recompute the largest absolute stage residual at the collocation
    /// nodes of every hazard stage.
    pub fn node_residuals(&self, params: &ModelParams) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..self.stages.len().saturating_sub(1) {
            let stage = &self.stages[k];
            let event = PendingEvent {
                chi: params.chi[k],
                threshold: params.t_bar[k],
            };
            let layout = GameLayout::new(params, &self.mask, stage.spec);
            for t in cheb_nodes(params.cheb_degree, event.threshold, params.t_domain_max)? {
                let res = stage_residuals(&layout, params, &stage.values, &self.stages[k + 1].values, event, t)?;
                worst = res.into_iter().fold(worst, f64::max);
            }
        }
        Ok(worst)
    }

    pub fn max_boundary_gap(&self) -> f64 {
        self.stages
            .iter()
            .map(StageSolution::max_boundary_gap)
            .fold(0.0, f64::max)
    }
}

/// Solve all tipping states of `mask` at instrument rate `rate`.
///
/// With N events, state N is the hazard-free quadratic with every loss
/// charged; state k < N uses the quadratic with k losses below T̲_{k+1} and
/// collocation above it, coupled to state k+1.
pub fn solve_full_chain(mask: &CoalitionMask, params: &ModelParams, rate: f64) -> Result<GameSolution> {
    solve_full_chain_with(mask, params, rate, &SolverOptions::default())
}

pub fn solve_full_chain_with(
    mask: &CoalitionMask,
    params: &ModelParams,
    rate: f64,
    options: &SolverOptions,
) -> Result<GameSolution> {
    let events = params.events();
    let spec0 = StageSpec::with_rate(params.incentive_mode, rate, 0)?;
    let base = solve_post_tipping_with(mask, spec0, params, options.reading)?;
    let final_solution = base.with_losses(params, events);
    let mut stages: Vec<StageSolution> = Vec::with_capacity(events + 1);
    stages.push(StageSolution {
        spec: final_solution.spec,
        values: final_solution
            .layout_values()
            .into_iter()
            .map(ValueFunction::Quadratic)
            .collect(),
        max_node_residual: 0.0,
        newton_iterations: 0,
    });
    for k in (0..events).rev() {
        let analytic = base.with_losses(params, k);
        let layout = GameLayout::new(params, mask, analytic.spec);
        let event = PendingEvent {
            chi: params.chi[k],
            threshold: params.t_bar[k],
        };
        let downstream = &stages.last().expect("later state solved").values;
        let stage = solve_pre_tipping_stage(
            &layout,
            params,
            &analytic.layout_values(),
            downstream,
            event,
            options,
        )
        .map_err(|e| e.in_stage(k))?;
        stages.push(stage);
    }
    stages.reverse();
    Ok(GameSolution {
        mask: mask.clone(),
        rate,
        has_coalition: !mask.is_empty(),
        outsider_regions: mask.outsiders().collect(),
        stages,
        base,
        t_domain_max: params.t_domain_max,
    })
}
