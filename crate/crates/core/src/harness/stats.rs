//! Summary statistics for experiment reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(x: &[f64], level: f64, resamples: usize, seed: u64) -> Result<Interval> {
    if x.is_empty() {
        return Err(Error::Domain("bootstrap of an empty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::Domain("bootstrap needs a level in (0, 1) and resamples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| x[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(Interval {
        lo: at(tail),
        hi: at(1.0 - tail),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    pub u: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Mann-Whitney U test of `a` against `b`, normal approximation with tie
/// correction. `u` counts pairs with `a > b` (ties count one half).
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<RankTest> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Domain("rank test needs two nonempty samples".into()));
    }
    let mut all: Vec<(f64, usize)> = a.iter().map(|v| (*v, 0)).chain(b.iter().map(|v| (*v, 1))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in &all[i..=j] {
            if item.1 == 0 {
                rank_sum_a += avg;
            }
        }
        i = j + 1;
    }
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum_a - n1f * (n1f + 1.0) / 2.0;
    let mu = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)).max(1.0));
    if var <= 0.0 {
        return Ok(RankTest {
            u,
            z: 0.0,
            p_value: 1.0,
        });
    }
    let z = (u - mu) / var.sqrt();
    let normal = Normal::standard();
    let p_value = (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0);
    Ok(RankTest { u, z, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_relative_eq!(std_dev(&[1.0, 2.0, 3.0, 4.0]), (5.0f64 / 3.0).sqrt());
        assert_eq!(std_dev(&[3.0]), 0.0);
    }

    #[test]
    fn u_counts_pairs() {
        let a = [3.0, 4.0, 5.0];
        let b = [1.0, 2.0, 4.0];
        let t = mann_whitney(&a, &b).unwrap();
        let brute: f64 = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
            .sum();
        assert_eq!(t.u, brute);
    }

    #[test]
    fn separated_samples_are_significant() {
        let a: Vec<f64> = (0..40).map(|i| 10.0 + i as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let t = mann_whitney(&a, &b).unwrap();
        assert!(t.p_value < 1e-6);
        assert!(t.z > 0.0);
        let same = mann_whitney(&a, &a).unwrap();
        assert!(same.p_value > 0.99);
    }

    #[test]
    fn monte_carlo_p_value_is_uniform_under_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rejections = 0;
        for _ in 0..400 {
            let a: Vec<f64> = (0..30).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..30).map(|_| rng.random()).collect();
            if mann_whitney(&a, &b).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        // 5% of 400 with a generous binomial margin
        assert!((8..=35).contains(&rejections), "{rejections}");
    }

    #[test]
    fn bootstrap_covers_the_mean() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let ci = bootstrap_mean_ci(&x, 0.95, 2000, 1).unwrap();
        let m = mean(&x);
        assert!(ci.lo < m && m < ci.hi);
        assert_eq!(ci, bootstrap_mean_ci(&x, 0.95, 2000, 1).unwrap());
        assert!(bootstrap_mean_ci(&[], 0.95, 10, 1).is_err());
        let far = Interval { lo: 5.0, hi: 6.0 };
        assert!(!ci.overlaps(&far));
        assert!(ci.overlaps(&ci));
    }
}
