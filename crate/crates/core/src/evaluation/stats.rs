//! Rank correlations with two-sided p-values.
//!
//! Both statistics reduce to exact integer quantities (doubled average ranks
//! for Spearman, pair counts for Kendall) before a single floating point
//! division, so independent implementations agree bit for bit.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// A correlation coefficient and its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub corr: f64,
    pub p: f64,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            axis: "sample",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::validation(format!(
            "rank correlation needs at least 3 observations, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::validation("rank correlation input must be finite"));
    }
    Ok(())
}

/// Twice the 1-based average rank of each value; ties share the mean rank.
pub fn doubled_ranks(x: &[f64]) -> Vec<i64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0i64; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share (start+1+end)/2
        let r2 = (start + 1 + end) as i64;
        for &i in &order[start..end] {
            out[i] = r2;
        }
        start = end;
    }
    out
}

/// Pearson correlation of two integer vectors, from exact integer moments.
pub(crate) fn integer_pearson(a: &[i64], b: &[i64]) -> Option<f64> {
    let n = a.len() as i128;
    let (sa, sb) = (a.iter().map(|&v| v as i128).sum::<i128>(), b.iter().map(|&v| v as i128).sum::<i128>());
    let saa: i128 = a.iter().map(|&v| (v as i128) * (v as i128)).sum();
    let sbb: i128 = b.iter().map(|&v| (v as i128) * (v as i128)).sum();
    let sab: i128 = a.iter().zip(b).map(|(&x, &y)| (x as i128) * (y as i128)).sum();
    let cov = n * sab - sa * sb;
    let va = n * saa - sa * sa;
    let vb = n * sbb - sb * sb;
    if va == 0 || vb == 0 {
        return None;
    }
    Some(cov as f64 / ((va as f64) * (vb as f64)).sqrt())
}

/// Spearman's rho with a t-approximation p-value on `n - 2` degrees of
/// freedom. A perfect correlation has p = 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_pair(a, b)?;
    let corr = integer_pearson(&doubled_ranks(a), &doubled_ranks(b))
        .ok_or_else(|| Error::Undefined("Spearman correlation of a constant vector".into()))?
        .clamp(-1.0, 1.0);
    Ok(Correlation {
        corr,
        p: spearman_p(corr, a.len()),
    })
}

pub(crate) fn spearman_p(corr: f64, n: usize) -> f64 {
    let dof = (n - 2) as f64;
    let denom = 1.0 - corr * corr;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = corr.abs() * (dof / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    (2.0 * dist.sf(t)).min(1.0)
}

/// Pair and tie counts behind Kendall's tau-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in `a` only, `b` only, and in both.
    pub ties_a: u64,
    pub ties_b: u64,
    pub ties_both: u64,
}

/// Counts by sorting on `(a, b)` and counting inversions in `b`.
pub fn pair_counts(a: &[f64], b: &[f64]) -> PairCounts {
    let n = a.len() as u64;
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    let tied_pairs = |run: u64| run * run.saturating_sub(1) / 2;

    // pairs tied in a, and tied in both
    let (mut ta, mut tab) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && a[order[j]] == a[order[i]] {
            j += 1;
        }
        ta += tied_pairs((j - i) as u64);
        let mut s = i;
        while s < j {
            let mut e = s + 1;
            while e < j && b[order[e]] == b[order[s]] {
                e += 1;
            }
            tab += tied_pairs((e - s) as u64);
            s = e;
        }
        i = j;
    }

    // strict inversions of b in (a, b) order are exactly the discordant pairs
    let mut bs: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let mut buf = bs.clone();
    let discordant = count_inversions(&mut bs, &mut buf);

    // bs is now sorted: pairs tied in b
    let mut tb = 0u64;
    let mut i = 0;
    while i < bs.len() {
        let mut j = i + 1;
        while j < bs.len() && bs[j] == bs[i] {
            j += 1;
        }
        tb += tied_pairs((j - i) as u64);
        i = j;
    }
    let total = tied_pairs(n);
    let concordant = total - discordant - ta - tb + tab;
    PairCounts {
        concordant,
        discordant,
        ties_a: ta - tab,
        ties_b: tb - tab,
        ties_both: tab,
    }
}

fn count_inversions(x: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = x.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (l, r) = x.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        count_inversions(l, bl) + count_inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if x[j] < x[i] {
            inv += (mid - i) as u64;
            buf[k] = x[j];
            j += 1;
        } else {
            buf[k] = x[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&x[i..mid]);
    let k = k + mid - i;
    buf[k..n].copy_from_slice(&x[j..n]);
    x.copy_from_slice(&buf[..n]);
    inv
}

/// Tau-b from pair counts; `None` if either vector is constant.
pub fn tau_b(c: &PairCounts) -> Option<f64> {
    let n0 = c.concordant + c.discordant + c.ties_a + c.ties_b + c.ties_both;
    let n1 = c.ties_a + c.ties_both;
    let n2 = c.ties_b + c.ties_both;
    if n1 == n0 || n2 == n0 {
        return None;
    }
    let s = c.concordant as f64 - c.discordant as f64;
    Some(s / (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt())
}

/// Sizes of runs of equal values.
fn tie_groups(x: &[f64]) -> Vec<u64> {
    let mut s: Vec<f64> = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i + 1;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        out.push((j - i) as u64);
        i = j;
    }
    out
}

/// Kendall's tau-b with a normal-approximation p-value using the
/// tie-corrected variance of `C - D`.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_pair(a, b)?;
    let c = pair_counts(a, b);
    let corr = tau_b(&c)
        .ok_or_else(|| Error::Undefined("Kendall tau of a constant vector".into()))?
        .clamp(-1.0, 1.0);
    let s = c.concordant as f64 - c.discordant as f64;
    let n = a.len() as f64;
    let (ta, tb) = (tie_groups(a), tie_groups(b));
    let sum = |t: &[u64], f: &dyn Fn(f64) -> f64| t.iter().map(|&v| f(v as f64)).sum::<f64>();
    let v0 = n * (n - 1.0) * (2.0 * n + 5.0);
    let vt = sum(&ta, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&tb, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&ta, &|t| t * (t - 1.0)) * sum(&tb, &|t| t * (t - 1.0)) / (2.0 * n * (n - 1.0));
    let v2 = sum(&ta, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&tb, &|t| t * (t - 1.0) * (t - 2.0))
        / (9.0 * n * (n - 1.0) * (n - 2.0));
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    let z = s.abs() / var.sqrt();
    Ok(Correlation {
        corr,
        p: erfc(z / std::f64::consts::SQRT_2).min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Doubled average ranks by counting smaller and equal values.
    fn brute_ranks(x: &[f64]) -> Vec<i64> {
        x.iter()
            .map(|&v| {
                let less = x.iter().filter(|&&w| w < v).count() as i64;
                let equal = x.iter().filter(|&&w| w == v).count() as i64;
                2 * less + equal + 1
            })
            .collect()
    }

    fn brute_pairs(a: &[f64], b: &[f64]) -> PairCounts {
        let mut c = PairCounts::default();
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let da = a[i].partial_cmp(&a[j]).unwrap();
                let db = b[i].partial_cmp(&b[j]).unwrap();
                use std::cmp::Ordering::Equal;
                match (da, db) {
                    (Equal, Equal) => c.ties_both += 1,
                    (Equal, _) => c.ties_a += 1,
                    (_, Equal) => c.ties_b += 1,
                    _ if da == db => c.concordant += 1,
                    _ => c.discordant += 1,
                }
            }
        }
        c
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = spearman(&a, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert_eq!(r.corr, 0.8);
        assert_eq!(spearman(&a, &a).unwrap().corr, 1.0);
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(spearman(&a, &rev).unwrap().corr, -1.0);
    }

    #[test]
    fn spearman_p_matches_reference_values() {
        // t = 0.8 * sqrt(3 / 0.36) = 2.3094; two-sided Student t, 3 dof
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert!((r.p - 0.1040880387).abs() < 1e-9, "{}", r.p);
        assert_eq!(spearman_p(0.0, 10), 1.0);
    }

    #[test]
    fn kendall_examples() {
        let r = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r.corr - 1.0 / 3.0).abs() < 1e-15);
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &a).unwrap().corr, 1.0);
        assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap().corr, -1.0);
    }

    #[test]
    fn kendall_p_matches_reference_values() {
        // no ties, n = 3: var(S) = 3*2*11/18, z = 1/sqrt(11/3)
        let r = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r.p - 0.6015081344).abs() < 1e-9, "{}", r.p);
        // with ties in both vectors
        let r = kendall_tau(&[1.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 4.0, 3.0]).unwrap();
        assert!((r.corr - 0.6666666667).abs() < 1e-9, "{}", r.corr);
        assert!((r.p - 0.1184329289).abs() < 1e-9, "{}", r.p);
    }

    #[test]
    fn constant_vectors_are_undefined() {
        let a = [1.0, 2.0, 3.0];
        let c = [2.0, 2.0, 2.0];
        assert!(matches!(spearman(&a, &c), Err(Error::Undefined(_))));
        assert!(matches!(kendall_tau(&c, &a), Err(Error::Undefined(_))));
    }

    #[test]
    fn short_or_mismatched_inputs_rejected() {
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).unwrap_err().is_validation());
        assert!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0]).unwrap_err().is_validation());
        assert!(spearman(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn oracles_agree_on_hundred_random_vectors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let n = rng.random_range(3..=50);
            // small ranges force ties in half of the cases
            let hi = if case % 2 == 0 { 5 } else { 1000 };
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..hi) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..hi) as f64).collect();
            assert_eq!(doubled_ranks(&a), brute_ranks(&a));
            let fast = pair_counts(&a, &b);
            assert_eq!(fast, brute_pairs(&a, &b));
            match spearman(&a, &b) {
                Ok(r) => assert_eq!(r.corr, integer_pearson(&brute_ranks(&a), &brute_ranks(&b)).unwrap()),
                Err(e) => assert!(matches!(e, Error::Undefined(_))),
            }
            match kendall_tau(&a, &b) {
                Ok(r) => assert_eq!(r.corr, tau_b(&brute_pairs(&a, &b)).unwrap()),
                Err(e) => assert!(matches!(e, Error::Undefined(_))),
            }
        }
    }

    proptest! {
        #[test]
        fn correlations_bounded_and_symmetric(
            pairs in prop::collection::vec((0i32..20, 0i32..20), 3..40)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            for f in [spearman, kendall_tau] {
                if let (Ok(r), Ok(s)) = (f(&a, &b), f(&b, &a)) {
                    prop_assert!((-1.0..=1.0).contains(&r.corr));
                    prop_assert!((0.0..=1.0).contains(&r.p));
                    prop_assert_eq!(r.corr, s.corr);
                }
            }
        }

        #[test]
        fn negation_flips_sign_only(
            pairs in prop::collection::vec((0i32..20, 0i32..20), 3..40)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let neg: Vec<f64> = a.iter().map(|v| -v).collect();
            for f in [spearman, kendall_tau] {
                if let (Ok(r), Ok(s)) = (f(&a, &b), f(&neg, &b)) {
                    prop_assert_eq!(r.corr, -s.corr);
                    prop_assert!((r.p - s.p).abs() < 1e-12);
                }
            }
        }
    }
}
