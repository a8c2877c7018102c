//! Diagnostics on symmetric worlds built by cloning one region `n` times.
//! Every quantity goes through the general solvers; closed forms appear
//! only as reference values.

use serde::{Deserialize, Serialize};

use crate::analytic::{solve_post_tipping, AnalyticGameSolution, StageSpec};
use crate::collocation::{solve_full_chain_with, GameSolution, SolverOptions};
use crate::error::{CoreError, Result};
use crate::types::{CoalitionMask, IncentiveMode, ModelParams, RegionParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomoParams {
    pub n: usize,
    /// One region's coefficients; its loss list is ignored in favour of `losses`.
    pub region: RegionParams,
    /// Loss flow per region for each tipping event.
    pub losses: Vec<f64>,
    pub chi: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub r: f64,
    pub lambda: f64,
    pub mode: IncentiveMode,
    /// Instrument rate applied to the coalition (τ, or τ₂ for sanctions).
    pub rate: f64,
    pub t_domain_max: f64,
    pub cheb_degree: usize,
}

impl HomoParams {
    pub fn new(region: RegionParams, n: usize) -> Self {
        HomoParams {
            n,
            region,
            losses: Vec::new(),
            chi: Vec::new(),
            thresholds: Vec::new(),
            r: 0.025,
            lambda: 0.0021,
            mode: IncentiveMode::TechSharing,
            rate: 0.0,
            t_domain_max: 6.0,
            cheb_degree: 4,
        }
    }

    /// Coefficient-wise mean of a region table.
    pub fn mean_region(regions: &[RegionParams]) -> RegionParams {
        let k = regions.len() as f64;
        let avg = |f: fn(&RegionParams) -> f64| regions.iter().map(f).sum::<f64>() / k;
        RegionParams::new(
            avg(|p| p.alpha),
            avg(|p| p.beta),
            avg(|p| p.epsilon),
            avg(|p| p.rho),
            avg(|p| p.eta),
        )
    }

    /// Benefit at the private optimum, α²/(2β) + ε.
    pub fn reference_benefit(&self) -> f64 {
        self.region.benefit(self.region.private_optimum())
    }

    /// Tipping events with losses given as fractions of the reference benefit.
    pub fn with_events(mut self, loss_pct: &[f64], chi: &[f64], thresholds: &[f64]) -> Self {
        let b = self.reference_benefit();
        self.losses = loss_pct.iter().map(|p| p * b).collect();
        self.chi = chi.to_vec();
        self.thresholds = thresholds.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(CoreError::InvalidParams(format!("need n >= 2, got {}", self.n)));
        }
        if self.losses.len() != self.chi.len() || self.chi.len() != self.thresholds.len() {
            return Err(CoreError::InvalidParams(
                "losses, chi and thresholds differ in length".into(),
            ));
        }
        self.model_params().validate()
    }

    pub fn model_params(&self) -> ModelParams {
        let region = self.region.clone().with_losses(self.losses.clone());
        let mut p = ModelParams::homogeneous(region, self.n);
        p.r = self.r;
        p.lambda = self.lambda;
        p.chi = self.chi.clone();
        p.t_bar = self.thresholds.clone();
        p.incentive_mode = self.mode;
        p.tau_bar = self.rate;
        p.t_domain_max = self.t_domain_max;
        p.cheb_degree = self.cheb_degree;
        p
    }

    /// Coalition of the first `m` regions (empty below two members) and its rate.
    fn structure(&self, m: usize) -> (CoalitionMask, f64) {
        if m < 2 {
            (CoalitionMask::empty(self.n), 0.0)
        } else {
            let members: Vec<usize> = (0..m).collect();
            (CoalitionMask::from_members(self.n, &members), self.rate)
        }
    }

    /// Post-tipping closed-form game of a size-`m` coalition with every loss charged.
    pub fn analytic(&self, m: usize) -> Result<AnalyticGameSolution> {
        let params = self.model_params();
        let (mask, rate) = self.structure(m);
        let spec = StageSpec::with_rate(self.mode, rate, params.events())?;
        solve_post_tipping(&mask, spec, &params)
    }

    /// Every tipping state of a size-`m` coalition.
    pub fn chain(&self, m: usize) -> Result<GameSolution> {
        let params = self.model_params();
        let (mask, rate) = self.structure(m);
        solve_full_chain_with(&mask, &params, rate, &SolverOptions::default())
    }
}

/// Slope in T of the per-region gap between full cooperation and none,
/// d/dT [V(T)/n − W(T)].
pub fn shrink_derivative(h: &HomoParams, t: f64) -> Result<f64> {
    h.validate()?;
    let grand = h.analytic(h.n)?;
    let none = h.analytic(0)?;
    let v = grand.coalition_value.expect("grand coalition has a value");
    let w = none.player_value(0);
    Ok(v.derivative(t) / h.n as f64 - w.derivative(t))
}

/// Large-population reference slope, −α√((1+τ)/(rβ)).
pub fn shrink_limit_reference(h: &HomoParams) -> f64 {
    -h.region.alpha * ((1.0 + h.rate) / (h.r * h.region.beta)).sqrt()
}

/// Member emissions minus outsider emissions, where the outsider faces a
/// coalition one member smaller.
pub fn emission_gap(h: &HomoParams, m: usize, t: f64) -> Result<f64> {
    check_size(h, m)?;
    let params = h.model_params();
    let inside = h.analytic(m)?;
    let outside = h.analytic(m - 1)?;
    Ok(crate::analytic::optimal_emission(0, &inside, t, &params)
        - crate::analytic::optimal_emission(m - 1, &outside, t, &params))
}

/// d/dT of [`emission_gap`]: (λ/β)(v₂(m)/s_m − w₂(m−1)/s_o) with the
/// instrument scales s of each side.
pub fn emission_gap_derivative(h: &HomoParams, m: usize, t: f64) -> Result<f64> {
    check_size(h, m)?;
    let _ = t;
    let inside = h.analytic(m)?;
    let outside = h.analytic(m - 1)?;
    let v2 = inside.player_value(0).c2;
    let w2 = outside.player_value(m - 1).c2;
    let s_in = inside.spec.scale(m >= 2);
    let s_out = outside.spec.scale(false);
    Ok(h.lambda / h.region.beta * (v2 / s_in - w2 / s_out))
}

fn check_size(h: &HomoParams, m: usize) -> Result<()> {
    h.validate()?;
    if m < 1 || m > h.n {
        return Err(CoreError::InvalidParams(format!("coalition size {m} outside 1..={}", h.n)));
    }
    Ok(())
}

/// Per-member join gain V(T,m)/m − W(T,m−1) in tipping state `occurred`.
pub fn join_gain(h: &HomoParams, m: usize, occurred: usize, t: f64) -> Result<f64> {
    check_size(h, m)?;
    if m < 2 {
        return Err(CoreError::InvalidParams("join gain needs m >= 2".into()));
    }
    let inside = h.chain(m)?;
    let outside = h.chain(m - 1)?;
    let v = inside.coalition_value(occurred, t)?.expect("coalition present");
    let w = outside.outsider_value(m - 1, occurred, t)?;
    Ok(v / m as f64 - w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingSurface {
    /// Tipping event the surface is taken across (0 = first).
    pub event: usize,
    pub sizes: Vec<usize>,
    pub temperatures: Vec<f64>,
    /// `values[i][k]` at `sizes[i]`, `temperatures[k]`.
    pub values: Vec<Vec<f64>>,
}

/// Join gain before event `event` minus the join gain after it, over a
/// grid of coalition sizes and temperatures.
pub fn tipping_expansion_surface(
    h: &HomoParams,
    event: usize,
    sizes: &[usize],
    temperatures: &[f64],
) -> Result<TippingSurface> {
    h.validate()?;
    if event >= h.losses.len() {
        return Err(CoreError::InvalidParams(format!(
            "event {event} but only {} configured",
            h.losses.len()
        )));
    }
    let mut values = Vec::with_capacity(sizes.len());
    for &m in sizes {
        check_size(h, m)?;
        if m < 2 {
            return Err(CoreError::InvalidParams("surface sizes must be >= 2".into()));
        }
        let inside = h.chain(m)?;
        let outside = h.chain(m - 1)?;
        let gain = |occ: usize, t: f64| -> Result<f64> {
            let v = inside.coalition_value(occ, t)?.expect("coalition present");
            Ok(v / m as f64 - outside.outsider_value(m - 1, occ, t)?)
        };
        let row = temperatures
            .iter()
            .map(|&t| Ok(gain(event, t)? - gain(event + 1, t)?))
            .collect::<Result<Vec<f64>>>()?;
        values.push(row);
    }
    Ok(TippingSurface {
        event,
        sizes: sizes.to_vec(),
        temperatures: temperatures.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentIncentives {
    /// Large-population participation incentive under technology sharing.
    pub sharing: f64,
    /// The same under sanctions.
    pub sanction: f64,
}

/// Large-population participation incentives (rα/(2β) − η²/ρ)/r for the
/// sharing rate `tau` and the sanction rate `tau2`.
pub fn instrument_equivalence(region: &RegionParams, r: f64, tau: f64, tau2: f64) -> InstrumentIncentives {
    let f = |rate: f64| (rate * region.alpha / (2.0 * region.beta) - region.eta * region.eta / region.rho) / r;
    InstrumentIncentives {
        sharing: f(tau),
        sanction: f(tau2),
    }
}

/// Per-region member value and deviating outsider value at `t` from the
/// finite-`n` solver: grand coalition against a coalition of all but one.
pub fn finite_incentive(h: &HomoParams, t: f64) -> Result<(f64, f64)> {
    h.validate()?;
    let grand = h.analytic(h.n)?;
    let rest = h.analytic(h.n - 1)?;
    let member = grand.coalition_value.expect("grand coalition has a value").value(t) / h.n as f64;
    let outsider = rest.player_value(h.n - 1).value(t);
    Ok((member, outsider))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(n: usize) -> HomoParams {
        HomoParams::new(RegionParams::new(12.0, 14.0, 0.0, 0.3, -0.2), n)
    }

    #[test]
    fn mean_region_averages_coefficients() {
        let a = RegionParams::new(2.0, 4.0, 0.0, 0.2, -0.1);
        let b = RegionParams::new(4.0, 8.0, 1.0, 0.4, -0.3);
        let m = HomoParams::mean_region(&[a, b]);
        assert_eq!((m.alpha, m.beta, m.epsilon, m.rho, m.eta), (3.0, 6.0, 0.5, 0.30000000000000004, -0.2));
    }

    #[test]
    fn emission_gap_slope_matches_finite_difference() {
        let h = base(8);
        for m in 2..=8 {
            for t in [1.0, 2.5, 4.0] {
                let d = 1e-4;
                let fd = (emission_gap(&h, m, t + d).unwrap() - emission_gap(&h, m, t - d).unwrap()) / (2.0 * d);
                let got = emission_gap_derivative(&h, m, t).unwrap();
                assert!((fd - got).abs() < 1e-7 * got.abs().max(1.0), "m={m}: {fd} vs {got}");
            }
        }
    }

    #[test]
    fn zero_losses_flatten_the_surface() {
        let h = base(5).with_events(&[0.0], &[0.0035], &[1.0]);
        let s = tipping_expansion_surface(&h, 0, &[2, 3, 5], &[1.5, 3.0]).unwrap();
        for row in &s.values {
            for v in row {
                assert!(v.abs() < 1e-8, "{v}");
            }
        }
    }

    #[test]
    fn equal_instruments_give_equal_incentives() {
        let h = base(3);
        let eq = instrument_equivalence(&h.region, h.r, 0.05, 0.05);
        assert_eq!(eq.sharing, eq.sanction);
        let zero = 2.0 * h.region.eta.powi(2) * h.region.beta / (h.region.alpha * h.region.rho);
        assert!(instrument_equivalence(&h.region, h.r, zero, 0.0).sharing.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(emission_gap_derivative(&base(4), 5, 1.0).is_err());
        assert!(shrink_derivative(&base(1), 1.0).is_err());
    }
}
