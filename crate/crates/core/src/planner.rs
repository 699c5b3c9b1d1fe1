//! Endpoint-constrained trajectory optimization of `theta^T Phi(xi)` plus a
//! small velocity regularizer.

use serde::{Deserialize, Serialize};

use crate::arm::ArmModel;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::optim::{bfgs, MinimizeOptions};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Regularizer weight relative to `|theta|_1`.
    pub smoothness: f64,
    pub max_iters: usize,
    /// Stationarity tolerance on the interior-waypoint gradient.
    pub grad_tol: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            smoothness: 1e-3,
            max_iters: 2000,
            grad_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Robot planning objective over the known features.
#[derive(Debug, Clone)]
pub struct PlanObjective<'a> {
    fs: &'a FeatureSet,
    model: &'a ArmModel,
    /// Weight per feature of `fs`; hidden features carry zero.
    weights: Vec<f64>,
    eps: f64,
}

impl<'a> PlanObjective<'a> {
    /// `theta` holds one weight per known feature, in feature order.
    pub fn new(fs: &'a FeatureSet, model: &'a ArmModel, theta: &[f64], cfg: &PlannerConfig) -> Result<Self> {
        let known = fs.known_indices();
        if theta.len() != known.len() {
            return Err(Error::Dimension {
                expected: known.len(),
                got: theta.len(),
                context: "weight vector",
            });
        }
        let mut weights = vec![0.0; fs.len()];
        for (&i, &w) in known.iter().zip(theta) {
            weights[i] = w;
        }
        Ok(Self::with_full_weights(fs, model, weights, cfg))
    }

    pub(crate) fn with_full_weights(
        fs: &'a FeatureSet,
        model: &'a ArmModel,
        weights: Vec<f64>,
        cfg: &PlannerConfig,
    ) -> Self {
        let l1: f64 = weights.iter().map(|w| w.abs()).sum();
        let scale = if l1 > 0.0 { l1 } else { 1.0 };
        Self {
            fs,
            model,
            weights,
            eps: cfg.smoothness * scale,
        }
    }

    pub fn regularizer_weight(&self) -> f64 {
        self.eps
    }

    pub fn cost(&self, traj: &Trajectory) -> f64 {
        let phi = self
            .fs
            .total_features(self.model, traj)
            .expect("trajectory matches arm");
        phi.0.iter().zip(&self.weights).map(|(p, w)| p * w).sum::<f64>()
            + self.eps * traj.smoothness()
    }

    /// Cost and its gradient with respect to every stacked waypoint value.
    pub fn cost_and_gradient(&self, traj: &Trajectory, grad: &mut [f64]) -> f64 {
        let n = traj.n_joints();
        let dt2 = traj.dt() * traj.dt();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut cost = 0.0;
        for (t, q) in traj.iter().enumerate() {
            let (phi, jac) = self.fs.phi_and_gradient(self.model, q);
            for (f, w) in self.weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                cost += w * phi[f];
                for j in 0..n {
                    grad[t * n + j] += w * jac[(f, j)];
                }
            }
        }
        let flat = traj.as_flat();
        for t in 0..traj.len() - 1 {
            for j in 0..n {
                let d = flat[(t + 1) * n + j] - flat[t * n + j];
                cost += self.eps * d * d / dt2;
                let g = 2.0 * self.eps * d / dt2;
                grad[(t + 1) * n + j] += g;
                grad[t * n + j] -= g;
            }
        }
        cost
    }

    /// Gradient restricted to the interior waypoints.
    pub fn interior_gradient(&self, traj: &Trajectory) -> Vec<f64> {
        let n = traj.n_joints();
        let mut g = vec![0.0; traj.as_flat().len()];
        self.cost_and_gradient(traj, &mut g);
        g[n..g.len() - n].to_vec()
    }
}

fn check_config(model: &ArmModel, q: &[f64], what: &'static str) -> Result<()> {
    if q.len() != model.n_links() {
        return Err(Error::Dimension {
            expected: model.n_links(),
            got: q.len(),
            context: what,
        });
    }
    Ok(())
}

/// Locally optimal trajectory from `start` to `goal` with `steps + 1`
/// waypoints, seeded with straight-line joint interpolation.
pub fn plan(
    fs: &FeatureSet,
    model: &ArmModel,
    theta: &[f64],
    start: &[f64],
    goal: &[f64],
    steps: usize,
    dt: f64,
    cfg: &PlannerConfig,
) -> Result<Plan> {
    check_config(model, start, "start configuration")?;
    check_config(model, goal, "goal configuration")?;
    let seed = Trajectory::straight_line(start, goal, steps, dt)?;
    plan_from_seed(fs, model, theta, &seed, cfg)
}

/// Descends from `seed`, keeping its first and last waypoints fixed.
pub fn plan_from_seed(
    fs: &FeatureSet,
    model: &ArmModel,
    theta: &[f64],
    seed: &Trajectory,
    cfg: &PlannerConfig,
) -> Result<Plan> {
    if seed.horizon() < 2 {
        return Err(Error::Size(format!("need T >= 2, got {}", seed.horizon())));
    }
    if seed.n_joints() != model.n_links() {
        return Err(Error::Dimension {
            expected: model.n_links(),
            got: seed.n_joints(),
            context: "seed trajectory joints",
        });
    }
    let objective = PlanObjective::new(fs, model, theta, cfg)?;
    Ok(descend(&objective, seed, cfg))
}

pub(crate) fn descend(objective: &PlanObjective<'_>, seed: &Trajectory, cfg: &PlannerConfig) -> Plan {
    let n = seed.n_joints();
    let total = seed.as_flat().len();
    let mut work = seed.clone();
    let mut full_grad = vec![0.0; total];
    let interior0 = seed.as_flat()[n..total - n].to_vec();
    let result = bfgs(
        |x, g| {
            work.as_flat_mut()[n..total - n].copy_from_slice(x);
            let c = objective.cost_and_gradient(&work, &mut full_grad);
            g.copy_from_slice(&full_grad[n..total - n]);
            c
        },
        &interior0,
        MinimizeOptions {
            max_iters: cfg.max_iters,
            grad_tol: cfg.grad_tol,
        },
    );
    let mut trajectory = seed.clone();
    trajectory.as_flat_mut()[n..total - n].copy_from_slice(&result.x);
    if !result.converged {
        log::debug!(
            "planner stopped after {} iterations with gradient norm {:.3e}",
            result.iterations,
            result.grad_norm
        );
    }
    Plan {
        trajectory,
        cost: result.value,
        grad_norm: result.grad_norm,
        iterations: result.iterations,
        converged: result.converged,
    }
}

/// Replans the remainder of `current` from waypoint `index` to its goal,
/// warm-started from `current` itself. Waypoints `0..=index` are kept.
pub fn replan_after_update(
    fs: &FeatureSet,
    model: &ArmModel,
    theta: &[f64],
    current: &Trajectory,
    index: usize,
    cfg: &PlannerConfig,
) -> Result<Plan> {
    if index >= current.len() {
        return Err(Error::Size(format!("resume index {index} out of range")));
    }
    let remaining = current.horizon() - index;
    if remaining < 2 {
        let objective = PlanObjective::new(fs, model, theta, cfg)?;
        return Ok(Plan {
            cost: objective.cost(current),
            trajectory: current.clone(),
            grad_norm: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let tail = current.suffix(index)?;
    let planned = plan_from_seed(fs, model, theta, &tail, cfg)?;
    Ok(Plan {
        trajectory: current.splice(index, &planned.trajectory)?,
        ..planned
    })
}
