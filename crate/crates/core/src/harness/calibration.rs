//! Synthetic calibration of `P(beta_hat | r)`.
//!
//! For every feature, simulated humans correct the robot while caring only
//! about that feature. Each push is scored against every feature: it is a
//! relevant sample (`r = 1`) for the feature the human targeted and an
//! irrelevant one (`r = 0`) for the rest.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{weights_over_known, ExperimentConfig};
use super::derive_seed;
use crate::error::{Error, Result};
use crate::human::SimHuman;
use crate::rationality::{BetaMode, CalibrationSample, RationalityModel, JOINT_CELL};
use crate::scenario::Scenario;
use crate::trajectory::{Correction, Trajectory};

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub model: RationalityModel,
    pub samples: Vec<CalibrationSample>,
    /// Samples whose minimal-effort solve missed the residual tolerance.
    pub excluded: usize,
}

/// One simulated push with the feature its human cared about.
#[derive(Debug, Clone)]
pub struct CalibrationPush {
    pub target: usize,
    pub trial: usize,
    /// Which calibration trajectory was corrected.
    pub base: usize,
    pub correction: Correction,
}

/// The robot trajectories calibration humans correct.
pub fn calibration_trajectories(cfg: &ExperimentConfig, sc: &Scenario) -> Result<Vec<Trajectory>> {
    cfg.calibration
        .robot_weights
        .iter()
        .map(|w| {
            let weights = weights_over_known(&sc.fs, w);
            if weights.iter().all(|w| *w == 0.0) {
                Trajectory::straight_line(&sc.start, &sc.goal, sc.steps(), sc.dt)
            } else {
                Ok(sc.plan(&weights)?.trajectory)
            }
        })
        .collect()
}

/// Draws `trials_per_cell` pushes for every feature, cycling through the
/// calibration trajectories.
pub fn simulate_pushes(cfg: &ExperimentConfig, sc: &Scenario, xis: &[Trajectory]) -> Result<Vec<CalibrationPush>> {
    let n = sc.fs.len();
    let trials = cfg.calibration.trials_per_cell;
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|f| (0..trials).map(move |t| (f, t))).collect();
    jobs.par_iter()
        .map(|&(target, trial)| {
            let name = sc.fs.kinds()[target].name();
            let seed = derive_seed(cfg.calibration.seed, &[target as u64, trial as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let [lo, hi] = cfg.human.push_window;
            let index = rng.random_range(lo..=hi);
            let mut theta = vec![0.0; n];
            theta[target] = cfg.human.intent[name];
            let mut human = SimHuman::new(theta, cfg.human.beta, cfg.human.effort_weight, rng.random())?;
            let base = trial % xis.len();
            let correction = human.sample_correction(sc.push_context(), &xis[base], index)?;
            Ok(CalibrationPush {
                target,
                trial,
                base,
                correction,
            })
        })
        .collect()
}

/// Scores every push against every feature (and, in joint mode, against the
/// known features together).
pub fn score_pushes(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    xis: &[Trajectory],
    pushes: &[CalibrationPush],
) -> Result<Vec<CalibrationSample>> {
    let all: Vec<usize> = (0..sc.fs.len()).collect();
    let known = sc.fs.known_indices();
    let ctx = sc.rationality(cfg.learner.beta_max);
    let joint = cfg.learner.beta_mode == BetaMode::Joint;
    let scored: Vec<Vec<CalibrationSample>> = pushes
        .par_iter()
        .map(|p| {
            let xi = &xis[p.base];
            let per = ctx.estimate(xi, &p.correction, &all, BetaMode::PerFeature)?;
            let mut out: Vec<CalibrationSample> = per
                .iter()
                .map(|e| {
                    let f = e.feature.expect("per-feature estimates carry their feature");
                    sample(sc.fs.kinds()[f].name(), f == p.target, e)
                })
                .collect();
            if joint {
                let e = &ctx.estimate(xi, &p.correction, &known, BetaMode::Joint)?[0];
                out.push(sample(JOINT_CELL, sc.fs.is_known(p.target), e));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(scored.into_iter().flatten().collect())
}

fn sample(feature: &str, relevant: bool, e: &crate::rationality::BetaEstimate) -> CalibrationSample {
    CalibrationSample {
        feature: feature.to_string(),
        r: u8::from(relevant),
        beta_hat: e.beta_hat,
        effort_observed: e.effort_observed,
        effort_optimal: e.effort_optimal,
        converged: e.converged,
    }
}

/// Simulates, scores and fits. Fails naming the first cell left with too few
/// converged samples.
pub fn run_calibration(cfg: &ExperimentConfig) -> Result<CalibrationRun> {
    let sc = cfg.scenario()?;
    let xis = calibration_trajectories(cfg, &sc)?;
    let pushes = simulate_pushes(cfg, &sc, &xis)?;
    let samples = score_pushes(cfg, &sc, &xis, &pushes)?;
    let excluded = samples.iter().filter(|s| !s.converged).count();
    log::info!(
        "calibration: {} samples, {excluded} excluded as non-converged ({:.2}%)",
        samples.len(),
        100.0 * excluded as f64 / samples.len().max(1) as f64
    );
    let model = RationalityModel::fit(&samples, cfg.calibration.prior_relevant, cfg.learner.beta_max)?;
    Ok(CalibrationRun {
        model,
        samples,
        excluded,
    })
}

pub fn write_samples_csv(path: &Path, samples: &[CalibrationSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<CalibrationSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let expected = ["feature", "r", "beta_hat", "effort_observed", "effort_optimal", "converged"];
    if headers.iter().ne(expected) {
        return Err(Error::Config(format!(
            "calibration CSV columns {:?}, expected {expected:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
