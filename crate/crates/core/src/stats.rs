//! Small statistics helpers shared by the uniformity report and tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::field::{FieldElement, MODULUS};

/// Pearson chi-square statistic of `values` bucketed into `buckets` equal
/// slices of `[0, Q)`, with its upper-tail p-value. Returns `None` when
/// there are no values or fewer than two buckets.
pub fn chi_square_uniform_checked<I>(values: I, buckets: usize) -> Option<(f64, f64)>
where
    I: IntoIterator<Item = FieldElement>,
{
    if buckets < 2 {
        return None;
    }
    let mut counts = vec![0u64; buckets];
    let mut total = 0u64;
    for v in values {
        let b = (v.value() as u128 * buckets as u128 / MODULUS as u128) as usize;
        counts[b] += 1;
        total += 1;
    }
    if total == 0 {
        return None;
    }
    let expected = total as f64 / buckets as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((buckets - 1) as f64).expect("positive degrees of freedom");
    Some((stat, 1.0 - dist.cdf(stat)))
}

/// As [`chi_square_uniform_checked`], panicking on empty input.
pub fn chi_square_uniform<I>(values: I, buckets: usize) -> (f64, f64)
where
    I: IntoIterator<Item = FieldElement>,
{
    chi_square_uniform_checked(values, buckets).expect("non-empty sample and >= 2 buckets")
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
