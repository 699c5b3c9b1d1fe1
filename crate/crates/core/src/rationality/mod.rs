//! Rationality estimation for corrections.
//!
//! A correction is scored by how efficiently it produced the feature change it
//! induced: the observed effort `|u_H|^2` is compared with the least effort
//! `|u*|^2` able to produce the same change, and the maximum-likelihood
//! rationality under a Laplace-approximated observation model is
//! `beta_hat = k / (2 (|u_H|^2 - |u*|^2))`.

mod chi2;
mod correction;
mod model;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chi2::{fit_scaled_chi_squared, moments_estimate, ScaledChiSquared};
pub use correction::{
    optimal_correction, solve_optimal_correction, CorrectionProblem, OptimalCorrection, SolverConfig,
};
pub use model::{
    CalibrationSample, RationalityModel, RelevanceBelief, RelevanceCell, JOINT_CELL, MIN_CELL_SAMPLES,
};

use crate::arm::ArmModel;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::trajectory::{Correction, DeformationOperator, Trajectory};

/// Effort gaps below this are treated as a perfectly efficient correction.
pub const MIN_EFFORT_GAP: f64 = 1e-9;

/// Whether rationality is inferred separately per known feature or once for
/// the whole known-feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    #[default]
    PerFeature,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    pub effort_observed: f64,
    pub effort_optimal: f64,
    /// Action dimensionality.
    pub k: usize,
    /// Feature the estimate is conditioned on; `None` in joint mode.
    pub feature: Option<usize>,
    pub converged: bool,
}

impl BetaEstimate {
    pub fn effort_gap(&self) -> f64 {
        self.effort_observed - self.effort_optimal
    }
}

/// Closed-form maximizer of the Laplace log-likelihood over `beta`, clamped
/// to `[0, beta_max]`.
///
/// `tolerance` absorbs solver error when the minimal effort slightly exceeds
/// the observed one; anything beyond it is an error upstream.
pub fn estimate_beta(
    observed: &Correction,
    optimal: &Correction,
    k: usize,
    beta_max: f64,
    tolerance: f64,
) -> Result<BetaEstimate> {
    let effort_observed = observed.effort();
    let effort_optimal = optimal.effort();
    let gap = effort_observed - effort_optimal;
    if gap < -tolerance {
        return Err(Error::Domain(format!(
            "minimal effort {effort_optimal} exceeds observed effort {effort_observed}"
        )));
    }
    let beta_hat = if gap < MIN_EFFORT_GAP {
        beta_max
    } else {
        (k as f64 / (2.0 * gap)).min(beta_max)
    };
    Ok(BetaEstimate {
        beta_hat,
        effort_observed,
        effort_optimal,
        k,
        feature: None,
        converged: true,
    })
}

/// Log of the Laplace-approximated observation likelihood:
/// `-beta (|u_H|^2 - |u*|^2) + (k/2) log beta + (1/2) log|H| - (k/2) log(2 pi)`.
pub fn laplace_log_likelihood(
    beta: f64,
    effort_observed: f64,
    effort_optimal: f64,
    hessian_logdet: f64,
    k: usize,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta {beta} must be positive")));
    }
    let k = k as f64;
    Ok(-beta * (effort_observed - effort_optimal) + 0.5 * k * beta.ln() + 0.5 * hessian_logdet
        - 0.5 * k * (2.0 * std::f64::consts::PI).ln())
}

/// Laplace approximation of `log \int exp(-beta C(u)) du` around the minimizer
/// of `C`, given `C(u_min)` and `log det` of the Hessian of `C` there.
pub fn laplace_log_partition(beta: f64, min_cost: f64, hessian_logdet: f64, k: usize) -> f64 {
    let k = k as f64;
    -beta * min_cost + 0.5 * k * (2.0 * std::f64::consts::PI).ln() - 0.5 * k * beta.ln() - 0.5 * hessian_logdet
}

/// Everything needed to score one correction.
#[derive(Debug, Clone, Copy)]
pub struct RationalityContext<'a> {
    pub fs: &'a FeatureSet,
    pub model: &'a ArmModel,
    pub deformer: &'a DeformationOperator,
    pub solver: &'a SolverConfig,
    pub beta_max: f64,
}

impl RationalityContext<'_> {
    /// Estimates rationality for `observed` on each feature in `features`
    /// (per-feature mode) or once on all of them (joint mode).
    pub fn estimate(
        &self,
        xi: &Trajectory,
        observed: &Correction,
        features: &[usize],
        mode: BetaMode,
    ) -> Result<Vec<BetaEstimate>> {
        let deformed = self.deformer.deform(xi, observed)?;
        let target = self.fs.total_features(self.model, &deformed)?;
        let subsets: Vec<(Option<usize>, Vec<usize>)> = match mode {
            BetaMode::PerFeature => features.iter().map(|&f| (Some(f), vec![f])).collect(),
            BetaMode::Joint => vec![(None, features.to_vec())],
        };
        let k = self.model.n_links();
        let tol = 1e-6 * observed.effort().max(1e-12);
        subsets
            .par_iter()
            .map(|(feature, subset)| {
                let problem = CorrectionProblem::new(
                    self.fs,
                    self.model,
                    self.deformer,
                    xi,
                    &target,
                    observed.waypoint_index,
                    subset,
                )?;
                let opt = optimal_correction(&problem, Some(&observed.torque), self.solver)?;
                let mut est = estimate_beta(observed, &opt.correction, k, self.beta_max, tol)?;
                est.feature = *feature;
                est.converged = opt.converged;
                Ok(est)
            })
            .collect()
    }
}
