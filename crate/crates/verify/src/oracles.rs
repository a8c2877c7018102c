//! Reference computations written independently of the solver crate.

/// Shapley value by averaging marginal contributions over every join
/// order of `members`. `value` maps a bitset of regions to its worth and
/// must return 0 for the empty set.
pub fn shapley_by_permutations(members: &[usize], value: &dyn Fn(u64) -> f64) -> Vec<f64> {
    let m = members.len();
    let mut order: Vec<usize> = (0..m).collect();
    let mut totals = vec![0.0; m];
    let mut count = 0usize;
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; m];
    let visit = |order: &[usize], totals: &mut [f64]| {
        let mut bits = 0u64;
        let mut before = 0.0;
        for &k in order {
            bits |= 1 << members[k];
            let after = value(bits);
            totals[k] += after - before;
            before = after;
        }
    };
    visit(&order, &mut totals);
    count += 1;
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order, &mut totals);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    totals.iter().map(|t| t / count as f64).collect()
}

/// First point of the grid 0, step, 2·step, … at which `gap` turns
/// nonnegative, or `None` past `ceiling`.
pub fn linear_scan_root(gap: &mut dyn FnMut(f64) -> f64, step: f64, ceiling: f64) -> Option<f64> {
    let cells = (ceiling / step).round() as u64;
    (0..=cells).map(|k| k as f64 * step).find(|&tau| gap(tau) >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_of_an_additive_game_return_the_weights() {
        let w = [3.0, 5.0, 7.0, 11.0];
        let v = |bits: u64| (0..4).filter(|i| bits >> i & 1 == 1).map(|i| w[i]).sum::<f64>();
        let got = shapley_by_permutations(&[0, 1, 2, 3], &v);
        assert_eq!(got, w.to_vec());
    }

    #[test]
    fn glove_game() {
        // one left glove (0) and two right gloves (1, 2); a pair is worth 1
        let v = |bits: u64| if bits & 1 == 1 && bits & 0b110 != 0 { 1.0 } else { 0.0 };
        let got = shapley_by_permutations(&[0, 1, 2], &v);
        assert!((got[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((got[1] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn scan_finds_the_first_nonnegative_cell() {
        let mut g = |x: f64| x - 0.01234;
        let got = linear_scan_root(&mut g, 1e-5, 0.5).unwrap();
        assert!((got - 0.01234).abs() <= 1e-5);
        let mut never = |_: f64| -1.0;
        assert_eq!(linear_scan_root(&mut never, 0.1, 0.5), None);
    }
}
