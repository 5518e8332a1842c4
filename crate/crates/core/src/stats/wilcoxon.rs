use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of nonzero differences for which the null distribution is
/// enumerated exactly.
pub const EXACT_MAX_N: usize = 25;
/// Minimum paired-sample length.
pub const MIN_PAIRED: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W⁺, W⁻)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_two_sided: f64,
    pub n_effective: usize,
    pub exact: bool,
}

/// Signed ranks of the nonzero differences, as doubled midranks so ties stay
/// integral. Returns `(doubled_ranks, positive, tie_group_sizes)`.
fn doubled_signed_ranks(d: &[f64]) -> (Vec<u64>, Vec<bool>, Vec<usize>) {
    let mut nz: Vec<(f64, bool)> = d.iter().filter(|v| **v != 0.0).map(|&v| (v.abs(), v > 0.0)).collect();
    nz.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = nz.len();
    let mut ranks = vec![0u64; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].0 == nz[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1, midrank (i+j+2)/2
        for r in &mut ranks[i..=j] {
            *r = (i + j + 2) as u64;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, nz.iter().map(|p| p.1).collect(), ties)
}

/// Number of sign assignments whose doubled positive-rank sum is `<= limit`.
fn count_at_most(doubled: &[u64], limit: u64) -> u64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    counts[..=(limit.min(total) as usize)].iter().sum()
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. With at most [`EXACT_MAX_N`] nonzero
/// differences the p-value comes from the exact null distribution over the
/// realised (midrank) rank multiset; above that a normal approximation with tie
/// correction and continuity correction is used.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("paired lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < MIN_PAIRED {
        return Err(Error::InvalidInput(format!("need at least {MIN_PAIRED} pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite paired value".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let (ranks, positive, ties) = doubled_signed_ranks(&d);
    let n = ranks.len();
    if n == 0 {
        return Err(Error::DegeneratePair);
    }
    let total: u64 = ranks.iter().sum();
    let wp2: u64 = ranks.iter().zip(&positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let wm2 = total - wp2;
    let w2 = wp2.min(wm2);

    let (p, exact) = if n <= EXACT_MAX_N {
        let tail = count_at_most(&ranks, w2) as f64;
        (2.0 * tail / (n as f64).exp2(), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let dev = (wp2 as f64 / 2.0 - mean).abs();
        let z = (dev - 0.5).max(0.0) / var.sqrt();
        (libm::erfc(z / std::f64::consts::SQRT_2), false)
    };
    Ok(WilcoxonResult {
        w: w2 as f64 / 2.0,
        w_plus: wp2 as f64 / 2.0,
        w_minus: wm2 as f64 / 2.0,
        p_two_sided: p.clamp(f64::MIN_POSITIVE, 1.0),
        n_effective: n,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// Independent oracle: ranks by counting, p by visiting every sign pattern.
    fn brute_force(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
        let a: Vec<f64> = x.iter().zip(y).map(|(p, q)| (p - q).abs()).filter(|v| *v != 0.0).collect();
        let pos: Vec<bool> = x.iter().zip(y).filter(|(p, q)| p != q).map(|(p, q)| p > q).collect();
        let n = a.len();
        if n == 0 {
            return None;
        }
        let rank: Vec<f64> = a
            .iter()
            .map(|v| {
                let less = a.iter().filter(|u| *u < v).count() as f64;
                let eq = a.iter().filter(|u| *u == v).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect();
        let total: f64 = rank.iter().sum();
        let wp: f64 = rank.iter().zip(&pos).filter(|(_, &p)| p).map(|(r, _)| r).sum();
        let w = wp.min(total - wp);
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| rank[i]).sum();
            if s.min(total - s) <= w {
                hits += 1;
            }
        }
        Some((w, hits as f64 / (1u64 << n) as f64))
    }

    #[test]
    fn five_positive_differences() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [0.5, 1.0, 1.5, 2.0, 2.5];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.p_two_sided, 0.0625);
        assert_eq!(r.w, 0.0);
        assert_eq!(r.w_plus, 15.0);
        assert_eq!(r.n_effective, 5);
        assert!(r.exact);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let x = [0.7, 0.8, 0.9, 0.6, 0.5];
        assert!(matches!(wilcoxon_signed_rank(&x, &x), Err(Error::DegeneratePair)));
    }

    #[test]
    fn rejects_short_or_unequal() {
        assert!(matches!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]), Err(Error::InvalidInput(_))));
        assert!(matches!(wilcoxon_signed_rank(&[1.0; 6], &[0.0; 5]), Err(Error::InvalidInput(_))));
        let mut x = [1.0; 6];
        x[2] = f64::NAN;
        assert!(matches!(wilcoxon_signed_rank(&x, &[0.0; 6]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn twenty_gaussian_pairs_match_enumeration() {
        let mut rng = rng_from_seed(20);
        let x: Vec<f64> = (0..20).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.6..0.4)).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        let (w, p) = brute_force(&x, &y).unwrap();
        assert_eq!(r.w, w);
        assert!((r.p_two_sided - p).abs() < 1e-12, "{} vs {p}", r.p_two_sided);
    }

    #[test]
    fn balanced_signs_give_one() {
        // d = [1,-1,2,-2,3,-3]: W+ = W- so every pattern is at least as extreme
        let x = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0];
        let r = wilcoxon_signed_rank(&x, &[0.0; 6]).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn normal_branch_tracks_exact_distribution() {
        let mut rng = rng_from_seed(7);
        for n in [26usize, 30, 40] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-1.0..0.7)).collect();
            let r = wilcoxon_signed_rank(&x, &y).unwrap();
            assert!(!r.exact);
            let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let (ranks, _, _) = doubled_signed_ranks(&d);
            let exact = (2.0 * count_at_most(&ranks, (2.0 * r.w) as u64) as f64 / (n as f64).exp2()).min(1.0);
            assert!((r.p_two_sided - exact).abs() < 1e-2, "n={n}: {} vs {exact}", r.p_two_sided);
        }
    }

    #[test]
    fn ties_use_midranks() {
        // |d| = 1,1,2,3,3 -> ranks 1.5,1.5,3,4.5,4.5
        let x = [1.0, -1.0, 2.0, 3.0, -3.0];
        let r = wilcoxon_signed_rank(&x, &[0.0; 5]).unwrap();
        assert_eq!(r.w_plus, 9.0);
        assert_eq!(r.w_minus, 6.0);
        let (_, p) = brute_force(&x, &[0.0; 5]).unwrap();
        assert_eq!(r.p_two_sided, p);
    }

    fn tied_sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (5usize..=12).prop_flat_map(|n| {
            (
                proptest::collection::vec(-4i32..=4, n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(|(steps, base)| {
                    let y: Vec<f64> = base.iter().map(|b| (b * 8.0).round() / 8.0).collect();
                    let x = y.iter().zip(&steps).map(|(b, s)| b + *s as f64 / 16.0).collect();
                    (x, y)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn exact_p_matches_enumeration((x, y) in tied_sample()) {
            match (wilcoxon_signed_rank(&x, &y), brute_force(&x, &y)) {
                (Ok(r), Some((w, p))) => {
                    prop_assert_eq!(r.w, w);
                    prop_assert!((r.p_two_sided - p.max(f64::MIN_POSITIVE)).abs() < 1e-12);
                }
                (Err(Error::DegeneratePair), None) => {}
                (r, o) => prop_assert!(false, "{:?} vs {:?}", r, o),
            }
        }
    }
}
