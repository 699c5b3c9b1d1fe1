//! One learning episode: the robot executes its plan and folds in every
//! correction it receives.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{fixed_update, map_update, LearnerParams, Strategy, UpdateContext, WeightVector};
use crate::rationality::{BetaEstimate, BetaMode, RationalityModel, JOINT_CELL};
use crate::scenario::Scenario;
use crate::trajectory::{Correction, Trajectory};

/// Everything the learner saw and did for one correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: usize,
    pub waypoint_index: usize,
    pub torque: Vec<f64>,
    /// `adaptive`, `fixed`, or `none` for a zero push.
    pub rule: String,
    /// Known feature names, the order of every per-feature field below.
    pub features: Vec<String>,
    pub delta_phi: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub effort_observed: f64,
    pub effort_optimal: Vec<f64>,
    pub solve_converged: Vec<bool>,
    pub p_relevant: Vec<f64>,
    pub gates: Vec<f64>,
    pub update_converged: bool,
    /// Whether the replanned suffix met the planner tolerance.
    pub replan_converged: bool,
    pub theta_before: Vec<f64>,
    pub theta_after: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Session {
    scenario: Arc<Scenario>,
    relevance: Option<Arc<RationalityModel>>,
    params: LearnerParams,
    strategy: Strategy,
    theta0: Vec<f64>,
    theta: Vec<f64>,
    initial: Trajectory,
    trajectory: Trajectory,
    theta_trace: Vec<Vec<f64>>,
    audits: Vec<AuditRecord>,
}

impl Session {
    /// Plans under `theta0` (known-feature weights). Adaptive learning needs
    /// a calibrated relevance model.
    pub fn new(
        scenario: Arc<Scenario>,
        relevance: Option<Arc<RationalityModel>>,
        params: LearnerParams,
        strategy: Strategy,
        theta0: Vec<f64>,
    ) -> Result<Self> {
        params.validate()?;
        if strategy == Strategy::Adaptive && relevance.is_none() {
            return Err(Error::Config("adaptive learning needs a calibrated rationality model".into()));
        }
        let plan = scenario.plan(&theta0)?;
        Ok(Self {
            scenario,
            relevance,
            params,
            strategy,
            theta: theta0.clone(),
            theta_trace: vec![theta0.clone()],
            theta0,
            initial: plan.trajectory.clone(),
            trajectory: plan.trajectory,
            audits: Vec::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn params(&self) -> &LearnerParams {
        &self.params
    }

    pub fn audits(&self) -> &[AuditRecord] {
        &self.audits
    }

    pub fn theta_trace(&self) -> &[Vec<f64>] {
        &self.theta_trace
    }

    /// `sum_t |theta_{t+1} - theta_t|`.
    pub fn path_length(&self) -> f64 {
        self.theta_trace
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .sum()
    }

    pub fn set_strategy(&mut self, strategy: Strategy) -> Result<()> {
        if strategy == Strategy::Adaptive && self.relevance.is_none() {
            return Err(Error::Config("adaptive learning needs a calibrated rationality model".into()));
        }
        self.strategy = strategy;
        Ok(())
    }

    /// Back to the initial weights and plan.
    pub fn reset(&mut self) {
        self.theta = self.theta0.clone();
        self.trajectory = self.initial.clone();
        self.theta_trace = vec![self.theta0.clone()];
        self.audits.clear();
    }

    /// Deform, estimate rationality per known feature, update the weights,
    /// replan from the push waypoint. On any failure the session is left
    /// exactly as it was.
    pub fn process_correction(&mut self, u: &Correction) -> Result<AuditRecord> {
        match self.try_correction(u) {
            Ok((record, theta, trajectory)) => {
                self.theta = theta;
                self.trajectory = trajectory;
                self.theta_trace.push(self.theta.clone());
                self.audits.push(record.clone());
                Ok(record)
            }
            Err(e) => {
                log::warn!("correction at waypoint {} rejected: {e}", u.waypoint_index);
                Err(e)
            }
        }
    }

    fn try_correction(&self, u: &Correction) -> Result<(AuditRecord, Vec<f64>, Trajectory)> {
        let sc = &*self.scenario;
        let known = sc.fs.known_indices();
        let names: Vec<String> = known.iter().map(|&i| sc.fs.kinds()[i].name().to_string()).collect();
        let deformed = sc.deformer.deform(&self.trajectory, u)?;
        let mut record = AuditRecord {
            seq: self.audits.len(),
            waypoint_index: u.waypoint_index,
            torque: u.torque.clone(),
            rule: "none".into(),
            features: names.clone(),
            delta_phi: vec![0.0; known.len()],
            beta_hat: vec![],
            effort_observed: u.effort(),
            effort_optimal: vec![],
            solve_converged: vec![],
            p_relevant: vec![],
            gates: vec![],
            update_converged: true,
            replan_converged: true,
            theta_before: self.theta.clone(),
            theta_after: self.theta.clone(),
        };
        if u.is_zero() {
            return Ok((record, self.theta.clone(), self.trajectory.clone()));
        }
        let before = sc.features(&self.trajectory)?;
        let after = sc.features(&deformed)?;
        let delta: Vec<f64> = known.iter().map(|&i| after.0[i] - before.0[i]).collect();
        record.delta_phi = delta.clone();

        let estimates = sc
            .rationality(self.params.beta_max)
            .estimate(&self.trajectory, u, &known, self.params.beta_mode)?;
        record.beta_hat = estimates.iter().map(|e| e.beta_hat).collect();
        record.effort_optimal = estimates.iter().map(|e| e.effort_optimal).collect();
        record.solve_converged = estimates.iter().map(|e| e.converged).collect();

        let weights = WeightVector::new(self.theta.clone(), self.params.alpha)?;
        let (theta, p, gates, converged) = match self.strategy {
            Strategy::Fixed => {
                let w = fixed_update(&weights, &UpdateContext::shared(delta, 1.0, self.params.lambda)?)?;
                (w.theta, vec![1.0; known.len()], vec![1.0; known.len()], true)
            }
            Strategy::Adaptive => {
                let p = self.relevance_probabilities(&estimates, &names)?;
                let ctx = UpdateContext::new(delta, p.clone(), self.params.lambda)?;
                let m = map_update(&weights, &ctx)?;
                (m.weights.theta, p, m.gates, m.converged)
            }
        };
        record.rule = self.strategy.name().into();
        record.p_relevant = p;
        record.gates = gates;
        record.update_converged = converged;
        record.theta_after = theta.clone();

        let replanned = crate::planner::replan_after_update(
            &sc.fs,
            &sc.model,
            &theta,
            &deformed,
            u.waypoint_index,
            &sc.planner,
        )?;
        record.replan_converged = replanned.converged;
        Ok((record, theta, replanned.trajectory))
    }

    fn relevance_probabilities(&self, estimates: &[BetaEstimate], names: &[String]) -> Result<Vec<f64>> {
        let model = self
            .relevance
            .as_ref()
            .ok_or_else(|| Error::Config("adaptive learning needs a calibrated rationality model".into()))?;
        match self.params.beta_mode {
            BetaMode::PerFeature => estimates
                .iter()
                .zip(names)
                .map(|(e, name)| model.relevance_posterior(e.beta_hat, name))
                .collect(),
            BetaMode::Joint => {
                let p = model.relevance_posterior(estimates[0].beta_hat, JOINT_CELL)?;
                Ok(vec![p; names.len()])
            }
        }
    }
}
