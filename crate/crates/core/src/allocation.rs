//! Transfer schemes that split a coalition's value among its members.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    #[default]
    GammaCore,
    Shapley,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::GammaCore => f.write_str("gamma-core"),
            Mechanism::Shapley => f.write_str("shapley"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub mechanism: Mechanism,
    /// Allocated value per member, in member order.
    pub values: Vec<f64>,
    pub feasible: bool,
    /// γ-core claims Λ_i (empty for Shapley).
    pub claims: Vec<f64>,
}

impl AllocationResult {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// γ-core split of `v` given each member's outside option `outside[i]`
/// (its value as an outsider of S∖{i}) and the reduced coalition value
/// `reduced[i]` of S∖{i}. The split is infeasible when a claim is negative
/// or the surplus over outside options is negative, since either leaves some
/// member below its outside option.
pub fn gamma_core(v: f64, outside: &[f64], reduced: &[f64]) -> AllocationResult {
    debug_assert_eq!(outside.len(), reduced.len());
    let m = outside.len();
    let claims: Vec<f64> = outside
        .iter()
        .zip(reduced)
        .map(|(w, vr)| (v - vr) - w)
        .collect();
    let claim_sum: f64 = claims.iter().sum();
    let surplus = v - outside.iter().sum::<f64>();
    let any_negative = claims.iter().any(|&c| c < 0.0);
    let all_zero = claims.iter().all(|&c| c == 0.0);
    let (values, feasible) = if claim_sum == 0.0 {
        // limit of proportional shares: equal split of whatever surplus remains
        (
            outside.iter().map(|w| w + surplus / m as f64).collect(),
            all_zero && surplus >= 0.0,
        )
    } else {
        (
            outside
                .iter()
                .zip(&claims)
                .map(|(w, c)| w + c / claim_sum * surplus)
                .collect(),
            !any_negative && surplus >= 0.0,
        )
    };
    AllocationResult {
        mechanism: Mechanism::GammaCore,
        values,
        feasible,
        claims,
    }
}

fn factorials(m: usize) -> Vec<f64> {
    let mut f = vec![1.0; m + 1];
    for k in 1..=m {
        f[k] = f[k - 1] * k as f64;
    }
    f
}

/// Weight (s−1)!(m−s)!/m! of a subset of size s containing the member.
pub fn shapley_weights(m: usize) -> Vec<f64> {
    let f = factorials(m);
    (0..=m)
        .map(|s| {
            if s == 0 {
                0.0
            } else {
                f[s - 1] * f[m - s] / f[m]
            }
        })
        .collect()
}

/// Shapley value over the players whose bits are set in `set`.
/// `subset_value` maps a nonempty sub-bitset of `set` to its value; the
/// empty set is worth zero.
pub fn shapley_on(set: u64, subset_value: impl Fn(u64) -> Option<f64>) -> Result<AllocationResult> {
    let m = set.count_ones() as usize;
    let weights = shapley_weights(m);
    let members: Vec<u32> = (0..64).filter(|b| set >> b & 1 == 1).collect();
    let mut values = vec![0.0; m];
    let lookup = |sub: u64| -> Result<f64> {
        if sub == 0 {
            Ok(0.0)
        } else {
            subset_value(sub).ok_or_else(|| CoreError::IncompleteOracle(format!("{sub:#b}")))
        }
    };
    // every nonempty subset, each member's marginal contribution to it
    let mut sub = set;
    while sub != 0 {
        let v_sub = lookup(sub)?;
        let w = weights[sub.count_ones() as usize];
        for (k, &b) in members.iter().enumerate() {
            if sub >> b & 1 == 1 {
                values[k] += w * (v_sub - lookup(sub & !(1u64 << b))?);
            }
        }
        sub = (sub - 1) & set;
    }
    Ok(AllocationResult {
        mechanism: Mechanism::Shapley,
        values,
        feasible: true,
        claims: Vec::new(),
    })
}

/// Shapley value of the single player `bit` within `set`.
pub fn shapley_member(
    set: u64,
    bit: u32,
    subset_value: impl Fn(u64) -> Option<f64>,
) -> Result<f64> {
    debug_assert!(set >> bit & 1 == 1);
    let m = set.count_ones() as usize;
    let weights = shapley_weights(m);
    let others = set & !(1u64 << bit);
    let lookup = |sub: u64| -> Result<f64> {
        if sub == 0 {
            Ok(0.0)
        } else {
            subset_value(sub).ok_or_else(|| CoreError::IncompleteOracle(format!("{sub:#b}")))
        }
    };
    let mut total = 0.0;
    let mut sub = others;
    loop {
        let with = sub | 1u64 << bit;
        total += weights[with.count_ones() as usize] * (lookup(with)? - lookup(sub)?);
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & others;
    }
    Ok(total)
}

/// Shapley value of an `m`-player game indexed by local bits 0..m.
pub fn shapley(m: usize, subset_value: impl Fn(u64) -> Option<f64>) -> Result<AllocationResult> {
    if m == 0 || m > 63 {
        return Err(CoreError::InvalidParams(format!(
            "Shapley value needs 1..=63 players, got {m}"
        )));
    }
    shapley_on((1u64 << m) - 1, subset_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permutations(items, k + 1, out);
            items.swap(k, i);
        }
    }

    /// Average marginal contribution over all join orders.
    fn permutation_oracle(m: usize, v: &[f64]) -> Vec<f64> {
        let mut perms = Vec::new();
        permutations(&mut (0..m).collect(), 0, &mut perms);
        let mut phi = vec![0.0; m];
        for p in &perms {
            let mut bits = 0usize;
            for &i in p {
                let before = v[bits];
                bits |= 1 << i;
                phi[i] += v[bits] - before;
            }
        }
        phi.iter().map(|x| x / perms.len() as f64).collect()
    }

    #[test]
    fn matches_permutation_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in 1..=6 {
            for _ in 0..5 {
                let mut v: Vec<f64> = (0..1usize << m).map(|_| rng.gen_range(-50.0..200.0)).collect();
                v[0] = 0.0;
                let oracle = permutation_oracle(m, &v);
                let got = shapley(m, |b| Some(v[b as usize])).unwrap();
                for (a, b) in got.values.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-10, "m={m}: {a} vs {b}");
                }
                for (k, a) in got.values.iter().enumerate() {
                    let single = shapley_member((1 << m) - 1, k as u32, |b| Some(v[b as usize])).unwrap();
                    assert!((a - single).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn two_player_formula() {
        let v = [0.0, 3.0, 5.0, 11.0];
        let got = shapley(2, |b| Some(v[b as usize])).unwrap();
        assert!((got.values[0] - (0.5 * 3.0 + 0.5 * (11.0 - 5.0))).abs() < 1e-14);
    }

    #[test]
    fn symmetric_players_split_equally() {
        let got = shapley(4, |b| Some((b.count_ones() as f64).powi(2))).unwrap();
        for x in &got.values {
            assert!((x - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_subset_is_reported() {
        let err = shapley(3, |b| if b == 0b101 { None } else { Some(1.0) }).unwrap_err();
        assert!(matches!(err, CoreError::IncompleteOracle(_)));
    }

    #[test]
    fn dummy_player_gets_singleton_value() {
        // player 2 adds exactly 4 to every subset
        let base = [0.0, 2.0, 5.0, 10.0];
        let v = |b: u64| {
            let rest = base[(b & 0b11) as usize];
            Some(rest + if b & 0b100 != 0 { 4.0 } else { 0.0 })
        };
        let got = shapley(3, v).unwrap();
        assert!((got.values[2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_core_examples() {
        let sym = gamma_core(10.0, &[3.0, 3.0], &[4.0, 4.0]);
        assert!(sym.feasible);
        assert!((sym.values[0] - 5.0).abs() < 1e-14 && (sym.values[1] - 5.0).abs() < 1e-14);

        let flat = gamma_core(7.0, &[3.0, 4.0], &[2.0, 1.0]);
        assert_eq!(flat.values, vec![3.0, 4.0]);

        // direct recomputation of the proportional rule
        let v = 30.0;
        let w = [5.0, 8.0, 9.0];
        let vr = [18.0, 15.0, 19.0];
        let lam = [30.0 - 18.0 - 5.0, 30.0 - 15.0 - 8.0, 30.0 - 19.0 - 9.0];
        let s: f64 = lam.iter().sum();
        let got = gamma_core(v, &w, &vr);
        for i in 0..3 {
            let expected = w[i] + lam[i] / s * (v - 22.0);
            assert!((got.values[i] - expected).abs() < 1e-12);
        }
        assert!(got.feasible);

        let bad = gamma_core(10.0, &[6.0, 1.0], &[5.0, 2.0]);
        assert!(!bad.feasible);

        // nonnegative claims but outside options exceed the coalition value
        let short = gamma_core(10.0, &[5.5, 5.5], &[4.0, 4.0]);
        assert!(short.claims.iter().all(|&c| c >= 0.0) && !short.feasible);
        assert!((short.total() - 10.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn budget_balance(v in 10.0f64..1e4, w in proptest::collection::vec(0.0f64..100.0, 2..8),
                          cut in proptest::collection::vec(0.0f64..100.0, 8)) {
            let m = w.len();
            let reduced: Vec<f64> = (0..m).map(|i| v - w[i] - cut[i]).collect();
            let g = gamma_core(v, &w, &reduced);
            prop_assert!((g.total() - v).abs() <= 1e-8 * v.abs());
            if g.feasible {
                for (a, o) in g.values.iter().zip(&w) {
                    prop_assert!(*a >= *o - 1e-9 * v.abs());
                }
            }
            let s = shapley(m, |b| Some(v * (b.count_ones() as f64 / m as f64).powf(1.3) + b as f64)).unwrap();
            let grand = v + ((1u64 << m) - 1) as f64;
            prop_assert!((s.total() - grand).abs() <= 1e-8 * grand.abs());
        }

        #[test]
        fn shapley_additive(a in proptest::collection::vec(-10.0f64..10.0, 16),
                            b in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let fa = |x: u64| Some(a[x as usize]);
            let fb = |x: u64| Some(b[x as usize]);
            let fab = |x: u64| Some(a[x as usize] + b[x as usize]);
            let sa = shapley(4, fa).unwrap();
            let sb = shapley(4, fb).unwrap();
            let sab = shapley(4, fab).unwrap();
            for i in 0..4 {
                prop_assert!((sa.values[i] + sb.values[i] - sab.values[i]).abs() < 1e-10);
            }
        }
    }
}
