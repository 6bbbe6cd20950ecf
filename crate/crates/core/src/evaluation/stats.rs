use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Largest number of nonzero deltas for which the exact null distribution
/// is used.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Doubled average ranks of `|d|` (integers even with ties) and the tie
/// group sizes.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0_u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided p-value of the paired Wilcoxon signed-rank test.
///
/// Zero deltas are dropped and tied magnitudes share their average rank.
/// Up to [`WILCOXON_EXACT_MAX_N`] nonzero deltas the exact permutation
/// distribution of W+ is used; above that a normal approximation with
/// tie-corrected variance and continuity correction. All-zero input gives 1.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<f64> {
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite delta".into()));
    }
    let nonzero: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(1.0);
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let w_plus: u64 = nonzero.iter().zip(&ranks).filter(|(&d, _)| d > 0.0).map(|(_, &r)| r).sum();
    let p = if n <= WILCOXON_EXACT_MAX_N {
        exact_p(&ranks, w_plus)
    } else {
        normal_p(n, &ties, w_plus as f64 / 2.0)
    };
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0))
}

fn exact_p(ranks: &[u64], w_plus: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    // counts[s] = number of sign assignments with doubled W+ == s
    let mut counts = vec![0.0_f64; total as usize + 1];
    counts[0] = 1.0;
    for &r in ranks {
        let r = r as usize;
        for s in (r..counts.len()).rev() {
            counts[s] += counts[s - r];
        }
    }
    let all = libm::pow(2.0, ranks.len() as f64);
    let lower: f64 = counts[..=w_plus as usize].iter().sum::<f64>() / all;
    let upper: f64 = counts[w_plus as usize..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(n: usize, ties: &[usize], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mu).abs() - 0.5).max(0.0) / sqrt(var);
    libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
}

/// Cliff's delta, `(#{a > b} - #{a < b}) / (|A| |B|)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Numeric("Cliff's delta needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Numeric("NaN in sample".into()));
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut dominance: i64 = 0;
    for &x in a {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        let above = sorted.len() - not_above;
        dominance += below as i64 - above as i64;
    }
    Ok(dominance as f64 / (a.len() as f64 * b.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_is_one() {
        assert_eq!(wilcoxon_signed_rank(&[0.0; 7]).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_deltas_sit_at_center() {
        let d = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0];
        assert!(wilcoxon_signed_rank(&d).unwrap() > 0.99);
    }

    #[test]
    fn all_positive_small_sample() {
        // one extreme assignment out of 2^6 per tail
        let p = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((p - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn cliff_extremes() {
        assert_eq!(cliffs_delta(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cliffs_delta(&[5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(cliffs_delta(&[], &[1.0]).is_err());
    }
}
