//! Domain types and the elementary model formulas shared by every solver.
//!
//! Units throughout: trillion PPP USD, GtCO₂, °C, years.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Benefit and damage coefficients of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    /// Benefit slope (trillion USD per GtCO₂).
    pub alpha: f64,
    /// Benefit curvature (trillion USD per GtCO₂²).
    pub beta: f64,
    /// Benefit intercept (trillion USD/yr).
    pub epsilon: f64,
    /// Damage curvature (trillion USD per °C²).
    pub rho: f64,
    /// Damage slope (trillion USD per °C). May be negative.
    pub eta: f64,
    /// Loss flow charged once each tipping event has realized, in event order.
    pub loss: Vec<f64>,
}

impl RegionParams {
    pub fn new(alpha: f64, beta: f64, epsilon: f64, rho: f64, eta: f64) -> Self {
        RegionParams {
            alpha,
            beta,
            epsilon,
            rho,
            eta,
            loss: Vec::new(),
        }
    }

    pub fn with_losses(mut self, loss: Vec<f64>) -> Self {
        self.loss = loss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.epsilon, self.rho, self.eta]
            .iter()
            .chain(self.loss.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::Validation("non-finite region parameter".into()));
        }
        if self.alpha <= 0.0 {
            return Err(CoreError::Validation(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.beta <= 0.0 {
            return Err(CoreError::Validation(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        // rho = 0 is admitted for zero-damage test games
        if self.rho < 0.0 {
            return Err(CoreError::Validation(format!(
                "rho must be nonnegative, got {}",
                self.rho
            )));
        }
        if self.loss.iter().any(|&l| l < 0.0) {
            return Err(CoreError::Validation("tipping losses must be >= 0".into()));
        }
        Ok(())
    }

    /// θ(q) = αq − ½βq² + ε
    pub fn benefit(&self, q: f64) -> f64 {
        self.alpha * q - 0.5 * self.beta * q * q + self.epsilon
    }

    /// D(T) = ½ρT² + ηT
    pub fn damage(&self, t: f64) -> f64 {
        0.5 * self.rho * t * t + self.eta * t
    }

    /// Sum of the loss flows of the first `events` tipping events.
    pub fn realized_loss(&self, events: usize) -> f64 {
        self.loss.iter().take(events).sum()
    }

    /// Unconstrained private optimum α/β.
    pub fn private_optimum(&self) -> f64 {
        self.alpha / self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IncentiveMode {
    /// Members' benefits are scaled by (1 + τ).
    #[default]
    TechSharing,
    /// Outsiders' benefits are scaled by (1 − τ₂).
    Sanction,
}

impl fmt::Display for IncentiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IncentiveMode::TechSharing => f.write_str("tech-sharing"),
            IncentiveMode::Sanction => f.write_str("sanction"),
        }
    }
}

/// Global model configuration: region table, climate and hazard constants, instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub regions: Vec<RegionParams>,
    pub names: Vec<String>,
    /// Discount rate (1/yr).
    pub r: f64,
    /// TCRE coefficient (°C per GtCO₂).
    pub lambda: f64,
    /// Hazard slopes per tipping event (1/(yr·°C)).
    pub chi: Vec<f64>,
    /// Hazard thresholds per tipping event (°C).
    pub t_bar: Vec<f64>,
    /// Grand-coalition technology-sharing (or sanction) rate.
    pub tau_bar: f64,
    pub incentive_mode: IncentiveMode,
    /// Upper bound of the collocation domain (°C).
    pub t_domain_max: f64,
    /// Chebyshev degree K used by the pre-tipping solver.
    pub cheb_degree: usize,
    /// Reference benefit θ_i(t₀) per region, used for the coalition sharing rate.
    pub t0_benefits: Vec<f64>,
}

impl ModelParams {
    /// Parameters with the default values of the climate and economic constants.
    /// Reference benefits default to θ_i(α_i/β_i).
    pub fn new(names: Vec<String>, regions: Vec<RegionParams>) -> Self {
        let t0_benefits = regions
            .iter()
            .map(|p| p.benefit(p.private_optimum()))
            .collect();
        ModelParams {
            regions,
            names,
            r: 0.025,
            lambda: 0.0021,
            chi: Vec::new(),
            t_bar: Vec::new(),
            tau_bar: 0.0,
            incentive_mode: IncentiveMode::TechSharing,
            t_domain_max: 6.0,
            cheb_degree: 4,
            t0_benefits,
        }
    }

    /// `n` copies of one region, named `R0..R{n-1}`.
    pub fn homogeneous(region: RegionParams, n: usize) -> Self {
        let names = (0..n).map(|i| format!("R{i}")).collect();
        ModelParams::new(names, vec![region; n])
    }

    pub fn n(&self) -> usize {
        self.regions.len()
    }

    /// Number of configured tipping events.
    pub fn events(&self) -> usize {
        self.chi.len()
    }

    pub fn with_events(mut self, chi: Vec<f64>, t_bar: Vec<f64>) -> Self {
        self.chi = chi;
        self.t_bar = t_bar;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(CoreError::InvalidParams("no regions".into()));
        }
        if self.names.len() != self.regions.len() {
            return Err(CoreError::InvalidParams(
                "region names and parameters differ in length".into(),
            ));
        }
        if self.t0_benefits.len() != self.regions.len() {
            return Err(CoreError::InvalidParams(
                "reference benefits and regions differ in length".into(),
            ));
        }
        for (name, p) in self.names.iter().zip(&self.regions) {
            p.validate()
                .map_err(|e| CoreError::InvalidParams(format!("region {name}: {e}")))?;
            if p.loss.len() < self.events() {
                return Err(CoreError::InvalidParams(format!(
                    "region {name} has {} loss entries for {} events",
                    p.loss.len(),
                    self.events()
                )));
            }
        }
        if !(self.r > 0.0) {
            return Err(CoreError::InvalidParams("discount rate must be > 0".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(CoreError::InvalidParams("lambda must be >= 0".into()));
        }
        if self.chi.len() != self.t_bar.len() {
            return Err(CoreError::InvalidParams(
                "chi and t_bar differ in length".into(),
            ));
        }
        if self.chi.len() > 2 {
            return Err(CoreError::InvalidParams(
                "at most two tipping events are supported".into(),
            ));
        }
        if self.chi.iter().any(|&c| !(c >= 0.0)) {
            return Err(CoreError::InvalidParams("chi entries must be >= 0".into()));
        }
        if self.t_bar.windows(2).any(|w| w[1] < w[0]) {
            return Err(CoreError::InvalidParams(
                "hazard thresholds must be nondecreasing".into(),
            ));
        }
        if self.t_bar.iter().any(|&t| !(t < self.t_domain_max)) {
            return Err(CoreError::InvalidParams(format!(
                "hazard thresholds must lie below the domain bound {}",
                self.t_domain_max
            )));
        }
        if !(0.0..1.0).contains(&self.tau_bar) {
            return Err(CoreError::InvalidParams(format!(
                "tau_bar must be in [0, 1), got {}",
                self.tau_bar
            )));
        }
        if self.cheb_degree < 2 {
            return Err(CoreError::InvalidParams("Chebyshev degree must be >= 2".into()));
        }
        Ok(())
    }

    /// Sharing rate in force for coalition `mask` at the configured `tau_bar`.
    pub fn tau_for(&self, mask: &CoalitionMask) -> Result<f64> {
        compute_tau(mask, self.tau_bar, &self.t0_benefits)
    }

    pub fn region_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn aggregate_private_optimum(&self) -> f64 {
        self.regions.iter().map(RegionParams::private_optimum).sum()
    }
}

/// H(T) = χ·max(0, T − T̲)
pub fn hazard(t: f64, chi: f64, t_bar: f64) -> f64 {
    chi * (t - t_bar).max(0.0)
}

/// τ = (Σ_{i∈S} θ_i(t₀) / Σ_all θ(t₀)) · τ̄
pub fn compute_tau(mask: &CoalitionMask, tau_bar: f64, t0_benefits: &[f64]) -> Result<f64> {
    if t0_benefits.iter().any(|&b| b < 0.0 || !b.is_finite()) {
        return Err(CoreError::InvalidCalibration(
            "reference benefits must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = t0_benefits.iter().sum();
    if total <= 0.0 {
        return Err(CoreError::InvalidCalibration(
            "reference benefits sum to zero".into(),
        ));
    }
    if mask.is_empty() {
        return Ok(0.0);
    }
    if mask.len() == mask.n() {
        return Ok(tau_bar);
    }
    let member: f64 = mask.members().map(|i| t0_benefits[i]).sum();
    Ok(member / total * tau_bar)
}

/// scale·θ(q) − D(T) − tipped losses
pub fn flow_payoff(q: f64, t: f64, region: &RegionParams, scale: f64, tipped_losses: f64) -> f64 {
    scale * region.benefit(q) - region.damage(t) - tipped_losses
}

/// Bit set of coalition members over `n` regions.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoalitionMask {
    n: usize,
    words: Vec<u64>,
}

impl CoalitionMask {
    pub fn empty(n: usize) -> Self {
        CoalitionMask {
            n,
            words: vec![0; n.div_ceil(64).max(1)],
        }
    }

    pub fn grand(n: usize) -> Self {
        let mut m = Self::empty(n);
        for i in 0..n {
            m.set(i);
        }
        m
    }

    pub fn from_members(n: usize, members: &[usize]) -> Self {
        let mut m = Self::empty(n);
        for &i in members {
            assert!(i < n, "member {i} out of range for {n} regions");
            m.set(i);
        }
        m
    }

    /// Mask from the low `n` bits of `bits` (n ≤ 64).
    pub fn from_bits(n: usize, bits: u64) -> Self {
        assert!(n <= 64, "from_bits needs n <= 64");
        let mut m = Self::empty(n);
        m.words[0] = if n == 64 { bits } else { bits & ((1u64 << n) - 1) };
        m
    }

    /// Low word of the bit set; exact whenever n ≤ 64.
    pub fn bits(&self) -> u64 {
        self.words[0]
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn clear(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Cardinality m.
    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn is_grand(&self) -> bool {
        self.len() == self.n
    }

    /// m = 0 or 2 ≤ m ≤ n.
    pub fn is_valid(&self) -> bool {
        self.len() != 1
    }

    pub fn with(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.set(i);
        m
    }

    pub fn without(&self, i: usize) -> Self {
        let mut m = self.clone();
        m.clear(i);
        m
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.contains(i))
    }

    pub fn outsiders(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| !self.contains(i))
    }

    pub fn is_subset_of(&self, other: &CoalitionMask) -> bool {
        self.n == other.n && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Member names joined with `+`, or `none` for the empty coalition.
    pub fn label(&self, names: &[String]) -> String {
        if self.is_empty() {
            return "none".into();
        }
        self.members()
            .map(|i| names.get(i).map(String::as_str).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl fmt::Debug for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let members: Vec<String> = self.members().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", members.join(","))
    }
}

/// Number of realized tipping events out of the configured total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TippingState {
    pub occurred: usize,
    pub total: usize,
}

impl TippingState {
    pub fn new(occurred: usize, total: usize) -> Result<Self> {
        if occurred > total {
            return Err(CoreError::InvalidParams(format!(
                "tipping state {occurred} exceeds {total} configured events"
            )));
        }
        Ok(TippingState { occurred, total })
    }

    pub fn is_final(&self) -> bool {
        self.occurred == self.total
    }
}

/// v₀ + v₁T + ½v₂T²
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct QuadraticValue {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadraticValue {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        QuadraticValue { c0, c1, c2 }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.c0 + self.c1 * t + 0.5 * self.c2 * t * t
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.c1 + self.c2 * t
    }

    pub fn shifted(&self, constant: f64) -> Self {
        QuadraticValue {
            c0: self.c0 + constant,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn china() -> RegionParams {
        RegionParams::new(14.13, 8.02, 0.0, 0.254, -0.152)
    }

    #[test]
    fn hazard_examples() {
        assert_eq!(hazard(1.5, 0.0035, 2.0), 0.0);
        assert_eq!(hazard(2.0, 0.0035, 2.0), 0.0);
        assert!((hazard(3.0, 0.0035, 2.0) - 0.0035).abs() < 1e-15);
    }

    #[test]
    fn tau_examples() {
        let benefits = vec![1.0, 1.0, 1.0, 1.0];
        let grand = CoalitionMask::grand(4);
        assert_eq!(compute_tau(&grand, 0.05, &benefits).unwrap(), 0.05);
        let empty = CoalitionMask::empty(4);
        assert_eq!(compute_tau(&empty, 0.05, &benefits).unwrap(), 0.0);
        let pair = CoalitionMask::from_members(4, &[0, 2]);
        assert!((compute_tau(&pair, 0.10, &benefits).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn tau_rejects_zero_benefits() {
        let mask = CoalitionMask::grand(3);
        let err = compute_tau(&mask, 0.05, &[0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, CoreError::InvalidCalibration(_)));
    }

    #[test]
    fn flow_payoff_examples() {
        let zero = RegionParams::new(1.0, 1.0, 0.0, 1.0, 1.0);
        assert_eq!(flow_payoff(0.0, 0.0, &zero, 1.0, 0.0), 0.0);
        let v = flow_payoff(1.0, 1.0, &china(), 1.0, 0.0);
        assert!((v - 10.145).abs() < 1e-12, "{v}");
        let tau = 0.07;
        let q = 0.8;
        let d = flow_payoff(q, 2.0, &china(), 1.0 + tau, 0.3) - flow_payoff(q, 2.0, &china(), 1.0, 0.3);
        assert!((d - tau * china().benefit(q)).abs() < 1e-12);
    }

    #[test]
    fn flow_payoff_maximized_at_private_optimum() {
        let p = china();
        let q_star = p.private_optimum();
        let f = |q| flow_payoff(q, 1.0, &p, 1.0, 0.0);
        assert!(f(q_star) > f(q_star + 1e-3));
        assert!(f(q_star) > f(q_star - 1e-3));
    }

    #[test]
    fn mask_basics() {
        let m = CoalitionMask::from_members(5, &[1, 3]);
        assert_eq!(m.len(), 2);
        assert!(m.contains(1) && m.contains(3) && !m.contains(0));
        assert_eq!(m.outsiders().collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(m.bits(), 0b01010);
        assert_eq!(CoalitionMask::from_bits(5, 0b01010), m);
        assert!(!CoalitionMask::from_members(5, &[2]).is_valid());
        assert!(CoalitionMask::empty(5).is_valid());
        assert_eq!(m.to_string(), "{1,3}");
        let big = CoalitionMask::grand(10_000);
        assert_eq!(big.len(), 10_000);
        assert_eq!(big.without(9_999).len(), 9_999);
    }

    #[test]
    fn tipping_state_bounds() {
        assert!(TippingState::new(2, 1).is_err());
        assert!(TippingState::new(1, 1).unwrap().is_final());
    }

    #[test]
    fn quadratic_value_eval() {
        let q = QuadraticValue::new(1.0, 2.0, -4.0);
        assert_eq!(q.value(1.0), 1.0);
        assert_eq!(q.derivative(1.0), -2.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hazard_nonnegative_monotone(t in -5.0f64..10.0, dt in 0.0f64..3.0, chi in 0.0f64..0.1, tb in 0.0f64..4.0) {
                let h0 = hazard(t, chi, tb);
                prop_assert!(h0 >= 0.0);
                prop_assert!(hazard(t + dt, chi, tb) >= h0);
            }

            #[test]
            fn tau_monotone_in_inclusion(bits in 0u64..4096, extra in 0usize..12, tau_bar in 0.0f64..0.99) {
                let benefits: Vec<f64> = (0..12).map(|i| 1.0 + i as f64).collect();
                let s = CoalitionMask::from_bits(12, bits);
                let bigger = s.with(extra);
                let a = compute_tau(&s, tau_bar, &benefits).unwrap();
                let b = compute_tau(&bigger, tau_bar, &benefits).unwrap();
                prop_assert!(a <= b + 1e-15);
                prop_assert!((0.0..=tau_bar + 1e-15).contains(&a));
            }
        }
    }
}
