//! Scaled chi-squared distributions and their maximum-likelihood fit.
//!
//! `X = scale * Y` with `Y ~ chi^2(df)` is a gamma distribution with shape
//! `df / 2` and scale `2 * scale`, which is how the fit is carried out.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledChiSquared {
    pub df: f64,
    pub scale: f64,
}

impl ScaledChiSquared {
    pub fn new(df: f64, scale: f64) -> Result<Self> {
        if !(df.is_finite() && df > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::Fit(format!(
                "invalid chi-squared parameters df={df}, scale={scale}"
            )));
        }
        Ok(Self { df, scale })
    }

    pub fn mean(&self) -> f64 {
        self.df * self.scale
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.df * self.scale * self.scale
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let k = self.df / 2.0;
        let theta = 2.0 * self.scale;
        if x == 0.0 {
            return match k.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Less) => f64::INFINITY,
                Some(std::cmp::Ordering::Equal) => -theta.ln(),
                _ => f64::NEG_INFINITY,
            };
        }
        (k - 1.0) * x.ln() - x / theta - k * theta.ln() - ln_gamma(k)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|x| self.ln_pdf(*x)).sum()
    }
}

fn validate(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 samples, got {}", samples.len())));
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::Fit(format!("sample {bad} is not strictly positive")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= f64::EPSILON * mean * mean {
        return Err(Error::Fit(format!(
            "degenerate samples: all {} values equal {mean}",
            samples.len()
        )));
    }
    Ok((mean, var))
}

/// Method-of-moments estimate, used as the seed and as a sanity floor.
pub fn moments_estimate(samples: &[f64]) -> Result<ScaledChiSquared> {
    let (mean, var) = validate(samples)?;
    // mean = df s, var = 2 df s^2
    let scale = var / (2.0 * mean);
    ScaledChiSquared::new(mean / scale, scale)
}

/// Maximum-likelihood fit of `df` and `scale`.
///
/// The shape solves `ln k - psi(k) = ln(mean) - mean(ln x)`, whose left side
/// is strictly decreasing, so bisection in `ln k` brackets it reliably.
pub fn fit_scaled_chi_squared(samples: &[f64]) -> Result<ScaledChiSquared> {
    let (mean, _) = validate(samples)?;
    let n = samples.len() as f64;
    let mean_log = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let target = mean.ln() - mean_log;
    if !(target > 0.0) {
        return Err(Error::Fit("samples carry no spread in log space".into()));
    }
    let f = |lk: f64| {
        let k = lk.exp();
        k.ln() - digamma(k) - target
    };
    let (mut lo, mut hi) = (-30.0_f64, 30.0_f64);
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return Err(Error::Fit(format!("shape equation has no root for spread {target}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let shape = (0.5 * (lo + hi)).exp();
    let fit = ScaledChiSquared::new(2.0 * shape, mean / (2.0 * shape))?;
    let seed = moments_estimate(samples)?;
    if fit.log_likelihood(samples) + 1e-9 * n < seed.log_likelihood(samples) {
        return Err(Error::Fit("likelihood fit fell below moments seed".into()));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution};

    #[test]
    fn recovers_parameters_from_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = ChiSquared::new(3.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| 2.5 * dist.sample(&mut rng)).collect();
        let fit = fit_scaled_chi_squared(&xs).unwrap();
        assert!((fit.df - 3.0).abs() / 3.0 < 0.1, "df {}", fit.df);
        assert!((fit.scale - 2.5).abs() / 2.5 < 0.1, "scale {}", fit.scale);
        let seed = moments_estimate(&xs).unwrap();
        assert!(fit.log_likelihood(&xs) >= seed.log_likelihood(&xs));
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = ChiSquared::new(1.7).unwrap();
        let xs: Vec<f64> = (0..500).map(|_| dist.sample(&mut rng)).collect();
        let a = fit_scaled_chi_squared(&xs).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| 7.5 * x).collect();
        let b = fit_scaled_chi_squared(&ys).unwrap();
        assert!((a.df - b.df).abs() < 1e-6);
        assert_relative_eq!(b.scale, 7.5 * a.scale, max_relative = 1e-6);
    }

    #[test]
    fn degenerate_samples_rejected() {
        assert!(matches!(fit_scaled_chi_squared(&[2.0; 40]), Err(Error::Fit(_))));
        assert!(fit_scaled_chi_squared(&[1.0, 0.0, 2.0]).is_err());
        assert!(fit_scaled_chi_squared(&[1.0]).is_err());
    }

    #[test]
    fn density_matches_statrs() {
        use statrs::distribution::{Continuous, Gamma};
        let d = ScaledChiSquared::new(3.4, 0.6).unwrap();
        let g = Gamma::new(1.7, 1.0 / 1.2).unwrap();
        for x in [0.01, 0.5, 2.0, 9.0] {
            assert_relative_eq!(d.pdf(x), g.pdf(x), max_relative = 1e-12);
        }
        assert_eq!(d.pdf(-1.0), 0.0);
    }
}
