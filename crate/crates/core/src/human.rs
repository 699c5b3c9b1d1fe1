//! Simulated noisily-rational humans.
//!
//! A human with weights `theta` over the full feature set picks pushes from
//! `p(u) ∝ exp(-beta (theta^T Phi(xi_R + mu A^{-1} U) + lambda_h |u|^2))`.
//! The mode is found by quasi-Newton descent and, for finite `beta`, a short
//! Metropolis-Hastings chain started at the mode draws the actual push.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arm::ArmModel;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::optim::{bfgs, MinimizeOptions};
use crate::trajectory::{Correction, DeformationOperator, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub burn_in: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            burn_in: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimHuman {
    /// Weights over the full feature set, hidden features included.
    pub theta: Vec<f64>,
    /// Rationality; `f64::INFINITY` always returns the optimal push.
    pub beta: f64,
    pub effort_weight: f64,
    pub seed: u64,
    #[serde(skip, default = "default_rng")]
    rng: ChaCha8Rng,
}

fn default_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Environment shared by every push a human makes.
#[derive(Debug, Clone, Copy)]
pub struct PushContext<'a> {
    pub fs: &'a FeatureSet,
    pub model: &'a ArmModel,
    pub deformer: &'a DeformationOperator,
    pub sampler: SamplerConfig,
}

/// `theta^T Phi(deform(u)) + lambda_h |u|^2` for one push index.
pub struct PushCost<'a> {
    ctx: PushContext<'a>,
    xi: &'a Trajectory,
    response: Vec<f64>,
    theta: &'a [f64],
    effort_weight: f64,
}

impl<'a> PushCost<'a> {
    pub fn new(
        ctx: PushContext<'a>,
        xi: &'a Trajectory,
        index: usize,
        theta: &'a [f64],
        effort_weight: f64,
    ) -> Result<Self> {
        ctx.deformer.check_index(index)?;
        if theta.len() != ctx.fs.len() {
            return Err(Error::Dimension {
                expected: ctx.fs.len(),
                got: theta.len(),
                context: "human weights",
            });
        }
        if xi.len() != ctx.deformer.steps() + 1 || xi.n_joints() != ctx.model.n_links() {
            return Err(Error::Dimension {
                expected: (ctx.deformer.steps() + 1) * ctx.model.n_links(),
                got: xi.as_flat().len(),
                context: "trajectory size for push",
            });
        }
        Ok(Self {
            ctx,
            xi,
            response: ctx.deformer.response(index),
            theta,
            effort_weight,
        })
    }

    pub fn value_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let n = u.len();
        let last = self.xi.len() - 1;
        let mut q = vec![0.0; n];
        let mut cost = self.effort_weight * u.iter().map(|v| v * v).sum::<f64>();
        for (g, v) in grad.iter_mut().zip(u) {
            *g = 2.0 * self.effort_weight * v;
        }
        for (t, base) in self.xi.iter().enumerate() {
            let r = if t == 0 || t == last { 0.0 } else { self.response[t] };
            for j in 0..n {
                q[j] = base[j] + r * u[j];
            }
            let (phi, jac) = self.ctx.fs.phi_and_gradient(self.ctx.model, &q);
            for (f, w) in self.theta.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                cost += w * phi[f];
                if r != 0.0 {
                    for j in 0..n {
                        grad[j] += w * r * jac[(f, j)];
                    }
                }
            }
        }
        cost
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        let mut g = vec![0.0; u.len()];
        self.value_and_gradient(u, &mut g)
    }

    /// Push minimizing the cost, found from `u = 0`.
    pub fn optimal_push(&self) -> Result<Vec<f64>> {
        let n = self.ctx.model.n_links();
        let m = bfgs(
            |u, g| self.value_and_gradient(u, g),
            &vec![0.0; n],
            MinimizeOptions {
                max_iters: 1000,
                grad_tol: 1e-9,
            },
        );
        if !m.value.is_finite() || m.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Optimizer(format!(
                "push optimizer diverged after {} iterations",
                m.iterations
            )));
        }
        if !m.converged {
            // the line search stalls near machine precision on flat costs
            let scale = 1e-6 * (1.0 + m.value.abs());
            if m.grad_norm > scale {
                return Err(Error::Optimizer(format!(
                    "push optimizer stopped with gradient norm {:.3e} after {} iterations",
                    m.grad_norm, m.iterations
                )));
            }
        }
        Ok(m.x)
    }

    /// Hessian of the cost from central differences of its gradient.
    pub fn hessian(&self, u: &[f64]) -> DMatrix<f64> {
        let k = u.len();
        let mut h = DMatrix::zeros(k, k);
        let mut gp = vec![0.0; k];
        let mut gm = vec![0.0; k];
        for j in 0..k {
            let step = 1e-5 * u[j].abs().max(1.0);
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[j] += step;
            dn[j] -= step;
            self.value_and_gradient(&up, &mut gp);
            self.value_and_gradient(&dn, &mut gm);
            for i in 0..k {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        (&h + h.transpose()) * 0.5
    }
}

impl SimHuman {
    pub fn new(theta: Vec<f64>, beta: f64, effort_weight: f64, seed: u64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("human rationality {beta} must be positive")));
        }
        if !(effort_weight.is_finite() && effort_weight > 0.0) {
            return Err(Error::Domain(format!("effort weight {effort_weight} must be positive")));
        }
        if theta.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("human weights must be finite".into()));
        }
        Ok(Self {
            theta,
            beta,
            effort_weight,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Human who cares only about `feature`, which must be inside the robot's
    /// hypothesis space.
    pub fn relevant(fs: &FeatureSet, feature: &str, intent: f64, beta: f64, effort_weight: f64, seed: u64) -> Result<Self> {
        let i = fs.index_by_name(feature)?;
        if !fs.is_known(i) {
            return Err(Error::Config(format!("`{feature}` is not a known feature")));
        }
        let mut theta = vec![0.0; fs.len()];
        theta[i] = intent;
        Self::new(theta, beta, effort_weight, seed)
    }

    /// Human who cares only about `feature`, which must be hidden from the robot.
    pub fn irrelevant(fs: &FeatureSet, feature: &str, intent: f64, beta: f64, effort_weight: f64, seed: u64) -> Result<Self> {
        let i = fs.index_by_name(feature)?;
        if fs.is_known(i) {
            return Err(Error::Config(format!("`{feature}` is known to the robot")));
        }
        let mut theta = vec![0.0; fs.len()];
        theta[i] = intent;
        Self::new(theta, beta, effort_weight, seed)
    }

    /// Restarts the noise stream from the seed.
    pub fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    /// Draws one push at `index` against the current robot trajectory.
    pub fn sample_correction(&mut self, ctx: PushContext<'_>, xi: &Trajectory, index: usize) -> Result<Correction> {
        let cost = PushCost::new(ctx, xi, index, &self.theta, self.effort_weight)?;
        let mode = cost.optimal_push()?;
        if self.beta.is_infinite() {
            return Correction::new(mode, index);
        }
        let u = metropolis(&cost, &mode, self.beta, ctx.sampler, &mut self.rng);
        Correction::new(u, index)
    }
}

/// Random-walk Metropolis-Hastings on `exp(-beta cost(u))` started at `start`,
/// with proposals shaped by the local curvature. Returns the final state.
pub fn metropolis<R: Rng>(cost: &PushCost<'_>, start: &[f64], beta: f64, cfg: SamplerConfig, rng: &mut R) -> Vec<f64> {
    let k = start.len();
    let floor = 2.0 * cost.effort_weight;
    let mut h = cost.hessian(start);
    let min_diag = (0..k).map(|i| h[(i, i)]).fold(f64::INFINITY, f64::min);
    let chol = Cholesky::new(h.clone()).filter(|_| min_diag > 0.0).or_else(|| {
        h = DMatrix::identity(k, k) * floor;
        Cholesky::new(h.clone())
    });
    let chol = chol.expect("effort term keeps the fallback curvature positive");
    // proposal covariance (2.38^2 / k) (beta H)^{-1}: draw L^{-T} z
    let factor = 2.38 / ((k as f64).sqrt() * beta.sqrt());
    let lt = chol.l().transpose();
    let mut x = start.to_vec();
    let mut fx = cost.value(&x);
    let total = cfg.steps.max(cfg.burn_in);
    for _ in 0..total {
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = lt
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        let proposal: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + factor * b).collect();
        let fp = cost.value(&proposal);
        let log_accept = -beta * (fp - fx);
        if log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept {
            x = proposal;
            fx = fp;
        }
    }
    x
}

#[cfg(test)]
mod tests;
