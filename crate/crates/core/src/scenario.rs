//! Everything fixed about one manipulation task: arm, features, horizon,
//! endpoints and numerical settings.

use crate::arm::ArmModel;
use crate::error::{Error, Result};
use crate::features::{FeatureCount, FeatureSet};
use crate::human::{PushContext, SamplerConfig};
use crate::planner::{plan, Plan, PlannerConfig};
use crate::rationality::{RationalityContext, SolverConfig};
use crate::trajectory::{DeformationOperator, Trajectory};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub fs: FeatureSet,
    pub model: ArmModel,
    pub deformer: DeformationOperator,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub dt: f64,
    pub planner: PlannerConfig,
    pub solver: SolverConfig,
    pub sampler: SamplerConfig,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fs: FeatureSet,
        model: ArmModel,
        start: Vec<f64>,
        goal: Vec<f64>,
        steps: usize,
        dt: f64,
        mu: f64,
        planner: PlannerConfig,
        solver: SolverConfig,
        sampler: SamplerConfig,
    ) -> Result<Self> {
        for (q, what) in [(&start, "start configuration"), (&goal, "goal configuration")] {
            if q.len() != model.n_links() {
                return Err(Error::Dimension {
                    expected: model.n_links(),
                    got: q.len(),
                    context: what,
                });
            }
        }
        let deformer = DeformationOperator::new(steps, model.n_links(), mu, dt)?;
        Ok(Self {
            fs,
            model,
            deformer,
            start,
            goal,
            dt,
            planner,
            solver,
            sampler,
        })
    }

    pub fn steps(&self) -> usize {
        self.deformer.steps()
    }

    /// Same task with a different known mask.
    pub fn with_known(&self, known: Vec<bool>) -> Result<Self> {
        Ok(Self {
            fs: self.fs.with_known(known)?,
            ..self.clone()
        })
    }

    /// Plan under known-feature weights.
    pub fn plan(&self, theta: &[f64]) -> Result<Plan> {
        plan(
            &self.fs,
            &self.model,
            theta,
            &self.start,
            &self.goal,
            self.steps(),
            self.dt,
            &self.planner,
        )
    }

    pub fn features(&self, xi: &Trajectory) -> Result<FeatureCount> {
        self.fs.total_features(&self.model, xi)
    }

    pub fn push_context(&self) -> PushContext<'_> {
        PushContext {
            fs: &self.fs,
            model: &self.model,
            deformer: &self.deformer,
            sampler: self.sampler,
        }
    }

    pub fn rationality(&self, beta_max: f64) -> RationalityContext<'_> {
        RationalityContext {
            fs: &self.fs,
            model: &self.model,
            deformer: &self.deformer,
            solver: &self.solver,
            beta_max,
        }
    }

    /// Known-feature weights extracted from a full-feature vector.
    pub fn known_weights(&self, full: &[f64]) -> Result<Vec<f64>> {
        if full.len() != self.fs.len() {
            return Err(Error::Dimension {
                expected: self.fs.len(),
                got: full.len(),
                context: "full weight vector",
            });
        }
        Ok(self.fs.known_indices().iter().map(|&i| full[i]).collect())
    }
}
