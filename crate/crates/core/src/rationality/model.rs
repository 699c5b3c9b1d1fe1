//! Calibrated likelihoods `P(beta_hat | r)` and the relevance posterior.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chi2::{fit_scaled_chi_squared, ScaledChiSquared};
use crate::error::{Error, Result};

/// Cell name used when a single rationality is estimated for all known features.
pub const JOINT_CELL: &str = "joint";

/// Minimum number of converged samples per `(feature, r)` cell.
pub const MIN_CELL_SAMPLES: usize = 30;

/// One labeled rationality estimate, as persisted in the calibration CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub feature: String,
    pub r: u8,
    pub beta_hat: f64,
    pub effort_observed: f64,
    pub effort_optimal: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceCell {
    pub relevant: ScaledChiSquared,
    pub irrelevant: ScaledChiSquared,
    pub n_relevant: usize,
    pub n_irrelevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalityModel {
    pub prior_relevant: f64,
    pub beta_max: f64,
    pub cells: BTreeMap<String, RelevanceCell>,
}

/// `P(r = 1 | beta_hat)` for each known feature, in known-feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceBelief {
    pub p_relevant: Vec<f64>,
}

impl RationalityModel {
    pub fn new(prior_relevant: f64, beta_max: f64, cells: BTreeMap<String, RelevanceCell>) -> Result<Self> {
        if !(prior_relevant > 0.0 && prior_relevant < 1.0) {
            return Err(Error::Config(format!("prior {prior_relevant} must lie in (0, 1)")));
        }
        if !(beta_max.is_finite() && beta_max > 0.0) {
            return Err(Error::Config(format!("beta_max {beta_max} must be positive")));
        }
        Ok(Self {
            prior_relevant,
            beta_max,
            cells,
        })
    }

    /// Fits one relevant/irrelevant pair per feature. Non-converged samples are
    /// excluded before fitting.
    pub fn fit(samples: &[CalibrationSample], prior_relevant: f64, beta_max: f64) -> Result<Self> {
        let mut groups: BTreeMap<&str, [Vec<f64>; 2]> = BTreeMap::new();
        let mut excluded = 0usize;
        for s in samples {
            if !s.converged {
                excluded += 1;
                continue;
            }
            if s.r > 1 {
                return Err(Error::Calibration(format!("relevance label {} is not 0/1", s.r)));
            }
            groups.entry(s.feature.as_str()).or_default()[s.r as usize].push(s.beta_hat.min(beta_max));
        }
        if excluded > 0 {
            log::info!(
                "excluded {excluded} of {} non-converged calibration samples",
                samples.len()
            );
        }
        let mut cells = BTreeMap::new();
        for (feature, [irr, rel]) in groups {
            for (r, pool) in [(0, &irr), (1, &rel)] {
                if pool.len() < MIN_CELL_SAMPLES {
                    return Err(Error::Calibration(format!(
                        "cell ({feature}, r={r}) has {} converged samples, need {MIN_CELL_SAMPLES}",
                        pool.len()
                    )));
                }
            }
            let fit = |pool: &[f64], r: u8| {
                fit_scaled_chi_squared(pool)
                    .map_err(|e| Error::Calibration(format!("cell ({feature}, r={r}): {e}")))
            };
            cells.insert(
                feature.to_string(),
                RelevanceCell {
                    relevant: fit(&rel, 1)?,
                    irrelevant: fit(&irr, 0)?,
                    n_relevant: rel.len(),
                    n_irrelevant: irr.len(),
                },
            );
        }
        Self::new(prior_relevant, beta_max, cells)
    }

    pub fn cell(&self, feature: &str) -> Result<&RelevanceCell> {
        self.cells
            .get(feature)
            .ok_or_else(|| Error::Calibration(format!("model has no cell for `{feature}`")))
    }

    /// `P(r=1 | beta_hat)` by Bayes' rule with the fitted densities. Estimates
    /// above the cap are evaluated at the cap.
    pub fn relevance_posterior(&self, beta_hat: f64, feature: &str) -> Result<f64> {
        if !(beta_hat >= 0.0) {
            return Err(Error::Domain(format!("beta_hat {beta_hat} must be nonnegative")));
        }
        let cell = self.cell(feature)?;
        let b = beta_hat.min(self.beta_max);
        let l1 = cell.relevant.ln_pdf(b) + self.prior_relevant.ln();
        let l0 = cell.irrelevant.ln_pdf(b) + (1.0 - self.prior_relevant).ln();
        // both densities underflow to zero: no evidence either way
        if cell.relevant.pdf(b) == 0.0 && cell.irrelevant.pdf(b) == 0.0 {
            log::debug!("both relevance densities vanish at beta_hat={b}; returning prior");
            return Ok(self.prior_relevant);
        }
        if l1.is_infinite() && l0.is_infinite() {
            return Ok(self.prior_relevant);
        }
        Ok(1.0 / (1.0 + (l0 - l1).exp()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for (name, cell) in &model.cells {
            for d in [cell.relevant, cell.irrelevant] {
                ScaledChiSquared::new(d.df, d.scale)
                    .map_err(|e| Error::Config(format!("cell `{name}`: {e}")))?;
            }
        }
        Self::new(model.prior_relevant, model.beta_max, model.cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(rel: ScaledChiSquared, irr: ScaledChiSquared) -> RationalityModel {
        let mut cells = BTreeMap::new();
        cells.insert(
            "table".to_string(),
            RelevanceCell {
                relevant: rel,
                irrelevant: irr,
                n_relevant: 100,
                n_irrelevant: 100,
            },
        );
        RationalityModel::new(0.5, 1e3, cells).unwrap()
    }

    #[test]
    fn equal_likelihoods_return_prior() {
        let d = ScaledChiSquared::new(3.0, 1.0).unwrap();
        let mut m = model(d, d);
        m.prior_relevant = 0.3;
        assert!((m.relevance_posterior(2.2, "table").unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn small_beta_favors_irrelevant() {
        let m = model(
            ScaledChiSquared::new(3.0, 5.0).unwrap(),
            ScaledChiSquared::new(1.0, 0.1).unwrap(),
        );
        let p = m.relevance_posterior(1e-12, "table").unwrap();
        assert!(p < 1e-5);
        let p_mid = m.relevance_posterior(3.0, "table").unwrap();
        // hand evaluation of Bayes' rule
        let f1 = m.cells["table"].relevant.pdf(3.0);
        let f0 = m.cells["table"].irrelevant.pdf(3.0);
        assert!((p_mid - f1 / (f1 + f0)).abs() < 1e-12);
        // capped estimates evaluate at the cap
        assert_eq!(
            m.relevance_posterior(5e3, "table").unwrap(),
            m.relevance_posterior(1e3, "table").unwrap()
        );
    }

    #[test]
    fn vanishing_densities_return_prior() {
        let m = model(
            ScaledChiSquared::new(3.0, 1e-3).unwrap(),
            ScaledChiSquared::new(4.0, 1e-3).unwrap(),
        );
        assert_eq!(m.relevance_posterior(1e3, "table").unwrap(), 0.5);
        assert!(m.relevance_posterior(-1.0, "table").is_err());
        assert!(m.relevance_posterior(1.0, "human").is_err());
    }

    #[test]
    fn fit_requires_full_cells() {
        let samples: Vec<CalibrationSample> = (0..40)
            .map(|i| CalibrationSample {
                feature: "table".into(),
                r: 1,
                beta_hat: 1.0 + i as f64,
                effort_observed: 1.0,
                effort_optimal: 0.5,
                converged: true,
            })
            .collect();
        let err = RationalityModel::fit(&samples, 0.5, 1e3).unwrap_err();
        assert!(err.to_string().contains("r=0"));
    }

    #[test]
    fn save_and_load() {
        let m = model(
            ScaledChiSquared::new(3.0, 5.0).unwrap(),
            ScaledChiSquared::new(1.0, 0.1).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(RationalityModel::load(&path).unwrap(), m);
    }
}
