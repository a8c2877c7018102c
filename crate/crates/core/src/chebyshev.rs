//! First-kind Chebyshev expansions on an interval [lo, hi].

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevExpansion {
    pub lo: f64,
    pub hi: f64,
    /// a₀ … a_K
    pub coeffs: Vec<f64>,
}

impl ChebyshevExpansion {
    pub fn new(lo: f64, hi: f64, coeffs: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(CoreError::InvalidParams(format!(
                "degenerate Chebyshev domain [{lo}, {hi}]"
            )));
        }
        if coeffs.is_empty() {
            return Err(CoreError::InvalidParams("empty Chebyshev coefficients".into()));
        }
        Ok(ChebyshevExpansion { lo, hi, coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// z(T) = (2T − lo − hi)/(hi − lo)
    pub fn z(&self, t: f64) -> f64 {
        (2.0 * t - self.lo - self.hi) / (self.hi - self.lo)
    }

    pub fn value(&self, t: f64) -> f64 {
        let (phi, _) = basis(self.degree(), self.z(t));
        dot(&phi, &self.coeffs)
    }

    /// dV/dT
    pub fn derivative(&self, t: f64) -> f64 {
        let (_, dphi) = basis(self.degree(), self.z(t));
        dot(&dphi, &self.coeffs) * 2.0 / (self.hi - self.lo)
    }

    /// Fit the interpolant through `values` sampled at `cheb_nodes(values.len() − 1, lo, hi)`.
    pub fn interpolate(lo: f64, hi: f64, values: &[f64]) -> Result<Self> {
        ChebyshevExpansion::new(lo, hi, cheb_fit(values))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 𝒯_k(z) and d𝒯_k/dz for k = 0..=degree.
pub fn basis(degree: usize, z: f64) -> (Vec<f64>, Vec<f64>) {
    let mut phi = vec![0.0; degree + 1];
    let mut dphi = vec![0.0; degree + 1];
    phi[0] = 1.0;
    if degree >= 1 {
        phi[1] = z;
        dphi[1] = 1.0;
    }
    for k in 1..degree {
        phi[k + 1] = 2.0 * z * phi[k] - phi[k - 1];
        dphi[k + 1] = 2.0 * phi[k] + 2.0 * z * dphi[k] - dphi[k - 1];
    }
    (phi, dphi)
}

/// z_d = −cos((2d−1)π/(2(K+1))), d = 1..=K+1.
pub fn reference_nodes(k: usize) -> Vec<f64> {
    let m = (k + 1) as f64;
    (1..=k + 1)
        .map(|d| -((2.0 * d as f64 - 1.0) * std::f64::consts::PI / (2.0 * m)).cos())
        .collect()
}

/// K+1 collocation nodes mapped to [lo, hi], increasing.
pub fn cheb_nodes(k: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(CoreError::InvalidParams("need K >= 1".into()));
    }
    if !(lo < hi) {
        return Err(CoreError::InvalidParams(format!(
            "degenerate node interval [{lo}, {hi}]"
        )));
    }
    Ok(reference_nodes(k)
        .into_iter()
        .map(|z| (z + 1.0) * (hi - lo) / 2.0 + lo)
        .collect())
}

/// Discrete-orthogonality coefficients of the interpolant through `values`
/// at the K+1 reference nodes (K = values.len() − 1).
pub fn cheb_fit(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let k = n - 1;
    let nodes = reference_nodes(k);
    let mut coeffs = vec![0.0; n];
    for (z, v) in nodes.iter().zip(values) {
        let (phi, _) = basis(k, *z);
        for (c, p) in coeffs.iter_mut().zip(&phi) {
            *c += v * p;
        }
    }
    coeffs[0] /= n as f64;
    for c in coeffs.iter_mut().skip(1) {
        *c *= 2.0 / n as f64;
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn k1_nodes() {
        let nodes = cheb_nodes(1, -1.0, 1.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((nodes[0] + h).abs() < 1e-15);
        assert!((nodes[1] - h).abs() < 1e-15);
    }

    #[test]
    fn k4_nodes_symmetric() {
        let nodes = cheb_nodes(4, 2.0, 6.0).unwrap();
        assert_eq!(nodes.len(), 5);
        for i in 0..5 {
            assert!((nodes[i] + nodes[4 - i] - 8.0).abs() < 1e-14);
            assert!(nodes[i] > 2.0 && nodes[i] < 6.0);
        }
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        assert!((nodes[2] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn nodes_are_polynomial_roots() {
        // roots of 𝒯_{K+1} via cos(acos) identity, independent of the recurrence
        for k in 1..12 {
            for z in reference_nodes(k) {
                let t = ((k + 1) as f64 * z.acos()).cos();
                assert!(t.abs() < 1e-12, "K={k} z={z} T={t}");
            }
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(cheb_nodes(0, 0.0, 1.0).is_err());
        assert!(cheb_nodes(3, 1.0, 1.0).is_err());
        assert!(ChebyshevExpansion::new(2.0, 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn constant_and_identity_fits() {
        let c = cheb_fit(&[3.5; 5]);
        assert!((c[0] - 3.5).abs() < 1e-14);
        assert!(c[1..].iter().all(|a| a.abs() < 1e-14));

        let z = reference_nodes(4);
        let c = cheb_fit(&z);
        assert!((c[1] - 1.0).abs() < 1e-14);
        for (k, a) in c.iter().enumerate() {
            if k != 1 {
                assert!(a.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let e = ChebyshevExpansion::new(1.0, 6.0, vec![0.3, -1.2, 0.7, 0.05, -0.02]).unwrap();
        for t in [1.1, 2.5, 4.0, 5.9] {
            let h = 1e-5;
            let fd = (e.value(t + h) - e.value(t - h)) / (2.0 * h);
            assert!((fd - e.derivative(t)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn polynomial_recovery(coeffs in proptest::collection::vec(-10.0f64..10.0, 3..9),
                               lo in -5.0f64..2.0, width in 0.5f64..6.0) {
            let hi = lo + width;
            let k = coeffs.len() - 1;
            // sample a monomial-form polynomial in z, then recover
            let nodes = cheb_nodes(k, lo, hi).unwrap();
            let poly = |t: f64| {
                let z = (2.0 * t - lo - hi) / (hi - lo);
                coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
            };
            let values: Vec<f64> = nodes.iter().map(|&t| poly(t)).collect();
            let e = ChebyshevExpansion::interpolate(lo, hi, &values).unwrap();
            for &t in &nodes {
                prop_assert!((e.value(t) - poly(t)).abs() < 1e-10 * (1.0 + poly(t).abs()));
            }
            for i in 0..=10 {
                let t = lo + width * i as f64 / 10.0;
                prop_assert!((e.value(t) - poly(t)).abs() < 1e-9 * (1.0 + poly(t).abs()).max(100.0));
            }
        }
    }
}
