//! Minimal-effort correction reproducing an observed feature change:
//!
//! ```text
//! minimize |u|^2  subject to  Phi_S(xi_R + mu A^{-1} U) = target_S
//! ```
//!
//! solved by quadratic-penalty continuation followed by a few projection
//! steps onto the linearized constraint set.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arm::ArmModel;
use crate::error::{Error, Result};
use crate::features::{FeatureCount, FeatureSet};
use crate::trajectory::{Correction, DeformationOperator, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub penalty_schedule: Vec<f64>,
    /// Exit tolerance on every constraint residual.
    pub residual_tol: f64,
    pub max_inner_iters: usize,
    pub polish_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            penalty_schedule: vec![1e2, 1e3, 1e4, 1e5, 1e6],
            residual_tol: 1e-5,
            max_inner_iters: 200,
            polish_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalCorrection {
    pub correction: Correction,
    pub effort: f64,
    /// Largest absolute constraint residual at exit.
    pub residual: f64,
    pub converged: bool,
}

/// Constraint map `u -> Phi_S(deform(xi, u)) - target_S` for one push index.
#[derive(Debug, Clone)]
pub struct CorrectionProblem<'a> {
    fs: &'a FeatureSet,
    model: &'a ArmModel,
    xi: &'a Trajectory,
    response: Vec<f64>,
    index: usize,
    subset: Vec<usize>,
    target: Vec<f64>,
}

impl<'a> CorrectionProblem<'a> {
    pub fn new(
        fs: &'a FeatureSet,
        model: &'a ArmModel,
        deformer: &DeformationOperator,
        xi: &'a Trajectory,
        target: &FeatureCount,
        index: usize,
        subset: &[usize],
    ) -> Result<Self> {
        deformer.check_index(index)?;
        if xi.len() != deformer.steps() + 1 || xi.n_joints() != model.n_links() {
            return Err(Error::Dimension {
                expected: (deformer.steps() + 1) * model.n_links(),
                got: xi.as_flat().len(),
                context: "trajectory size for correction solve",
            });
        }
        if target.len() != fs.len() {
            return Err(Error::Dimension {
                expected: fs.len(),
                got: target.len(),
                context: "target feature count",
            });
        }
        if subset.is_empty() || subset.iter().any(|&i| i >= fs.len()) {
            return Err(Error::Domain("feature subset is empty or out of range".into()));
        }
        Ok(Self {
            fs,
            model,
            xi,
            response: deformer.response(index),
            index,
            subset: subset.to_vec(),
            target: subset.iter().map(|&i| target.0[i]).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.model.n_links()
    }

    pub fn n_constraints(&self) -> usize {
        self.subset.len()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Constraint residuals and their Jacobian (constraints x joints).
    pub fn residual_and_jacobian(&self, u: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.dim();
        let m = self.subset.len();
        let mut c: Vec<f64> = self.target.iter().map(|t| -t).collect();
        let mut jac = DMatrix::zeros(m, n);
        let mut q = vec![0.0; n];
        for (t, base) in self.xi.iter().enumerate() {
            let r = self.response[t];
            let moved = t != 0 && t != self.xi.len() - 1;
            for j in 0..n {
                q[j] = base[j] + if moved { r * u[j] } else { 0.0 };
            }
            let (phi, g) = self.fs.phi_and_gradient(self.model, &q);
            for (row, &f) in self.subset.iter().enumerate() {
                c[row] += phi[f];
                if moved {
                    for j in 0..n {
                        jac[(row, j)] += r * g[(f, j)];
                    }
                }
            }
        }
        (c, jac)
    }

    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        self.residual_and_jacobian(u).0
    }

    /// Penalized cost `|u|^2 + lambda |c(u)|^2` and its gradient.
    pub fn penalized_cost(&self, u: &[f64], lambda: f64) -> (f64, Vec<f64>) {
        let (c, jac) = self.residual_and_jacobian(u);
        let mut g: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        for (row, cr) in c.iter().enumerate() {
            for j in 0..u.len() {
                g[j] += 2.0 * lambda * cr * jac[(row, j)];
            }
        }
        let cost = norm_sq(u) + lambda * norm_sq(&c);
        (cost, g)
    }

    /// `log det` of the Hessian of the penalized cost at `u`, from central
    /// differences of its analytic gradient.
    pub fn hessian_logdet(&self, u: &[f64], lambda: f64) -> Result<f64> {
        let k = u.len();
        let mut h = DMatrix::zeros(k, k);
        for j in 0..k {
            let step = 1e-5 * u[j].abs().max(1.0);
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[j] += step;
            dn[j] -= step;
            let gp = self.penalized_cost(&up, lambda).1;
            let gm = self.penalized_cost(&dn, lambda).1;
            for i in 0..k {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let chol = Cholesky::new(h)
            .ok_or_else(|| Error::Domain("penalized Hessian is not positive definite".into()))?;
        Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Levenberg-Marquardt on `|v|^2 + rho |c(s v)|^2` in the scaled variable `v = u / s`.
fn penalty_stage(p: &CorrectionProblem<'_>, v: &mut [f64], s: f64, rho: f64, max_iters: usize) {
    let k = v.len();
    let sqrt_rho = rho.sqrt();
    let eval = |v: &[f64]| -> (f64, DVector<f64>, DMatrix<f64>) {
        let u: Vec<f64> = v.iter().map(|x| x * s).collect();
        let (c, jac) = p.residual_and_jacobian(&u);
        let m = c.len();
        let mut r = DVector::zeros(k + m);
        let mut jr = DMatrix::zeros(k + m, k);
        for i in 0..k {
            r[i] = v[i];
            jr[(i, i)] = 1.0;
        }
        for row in 0..m {
            r[k + row] = sqrt_rho * c[row];
            for j in 0..k {
                jr[(k + row, j)] = sqrt_rho * s * jac[(row, j)];
            }
        }
        (r.norm_squared(), r, jr)
    };
    let (mut cost, mut r, mut jr) = eval(v);
    let mut damping = 1e-3;
    for _ in 0..max_iters {
        let jtj = jr.transpose() * &jr;
        let g = jr.transpose() * &r;
        if g.norm() <= 1e-13 * (1.0 + cost) {
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += damping * (1.0 + jtj[(i, i)]);
            }
            let Some(chol) = Cholesky::new(a) else {
                damping *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let (tc, tr, tj) = eval(&trial);
            if tc.is_finite() && tc < cost {
                let small = step.norm() <= 1e-14 * (1.0 + DVector::from_column_slice(v).norm());
                v.copy_from_slice(&trial);
                cost = tc;
                r = tr;
                jr = tj;
                damping = (damping * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
}

/// Projects onto the linearized constraints with minimum norm:
/// `v <- J^T (J J^T)^{-1} (J v - c)`. Its fixed points are exactly the KKT
/// points of the constrained problem.
fn polish(p: &CorrectionProblem<'_>, v: &mut [f64], s: f64, iters: usize, tol: f64) {
    let k = v.len();
    for _ in 0..iters {
        let u: Vec<f64> = v.iter().map(|x| x * s).collect();
        let (c, jac) = p.residual_and_jacobian(&u);
        let js = jac * s;
        let gram = &js * js.transpose();
        let Some(chol) = Cholesky::new(gram) else {
            return;
        };
        let vv = DVector::from_column_slice(v);
        let rhs = &js * &vv - DVector::from_vec(c.clone());
        let next = js.transpose() * chol.solve(&rhs);
        let trial: Vec<f64> = next.iter().copied().collect();
        let before = max_abs(&c);
        let after = max_abs(&p.residual(&trial.iter().map(|x| x * s).collect::<Vec<_>>()));
        if !after.is_finite() || (after > before && before <= tol) {
            return;
        }
        let moved = (0..k).map(|i| (trial[i] - v[i]).abs()).fold(0.0, f64::max);
        v.copy_from_slice(&trial);
        if moved <= 1e-13 && after <= tol {
            return;
        }
    }
}

fn solve_from(p: &CorrectionProblem<'_>, start: &[f64], scale: f64, cfg: &SolverConfig) -> OptimalCorrection {
    let mut v: Vec<f64> = start.iter().map(|x| x / scale).collect();
    for &rho in &cfg.penalty_schedule {
        penalty_stage(p, &mut v, scale, rho, cfg.max_inner_iters);
    }
    polish(p, &mut v, scale, cfg.polish_iters, cfg.residual_tol);
    let u: Vec<f64> = v.iter().map(|x| x * scale).collect();
    let residual = max_abs(&p.residual(&u));
    OptimalCorrection {
        effort: norm_sq(&u),
        converged: residual <= cfg.residual_tol,
        residual,
        correction: Correction {
            torque: u,
            waypoint_index: p.index,
        },
    }
}

/// Solves for the minimal-effort push at `index` whose deformation reproduces
/// `target` on the features in `subset`.
///
/// The solve starts from zero and, when given, from the observed push; the
/// feasible solution of least effort wins.
pub fn optimal_correction(
    problem: &CorrectionProblem<'_>,
    observed: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<OptimalCorrection> {
    let k = problem.dim();
    if let Some(o) = observed {
        if o.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: o.len(),
                context: "observed torque",
            });
        }
    }
    let scale = observed.map(|o| norm_sq(o).sqrt()).filter(|s| *s > 0.0).unwrap_or(1.0);
    let mut best = solve_from(problem, &vec![0.0; k], scale, cfg);
    if let Some(o) = observed {
        let alt = solve_from(problem, o, scale, cfg);
        let better = match (alt.converged, best.converged) {
            (true, false) => true,
            (true, true) => alt.effort < best.effort,
            (false, false) => alt.residual < best.residual,
            (false, true) => false,
        };
        if better {
            best = alt;
        }
    }
    if !best.converged {
        log::debug!(
            "correction solve at waypoint {} left residual {:.3e}",
            problem.index,
            best.residual
        );
    }
    Ok(best)
}

/// Convenience wrapper building the problem from its parts.
#[allow(clippy::too_many_arguments)]
pub fn solve_optimal_correction(
    fs: &FeatureSet,
    model: &ArmModel,
    deformer: &DeformationOperator,
    xi: &Trajectory,
    target: &FeatureCount,
    index: usize,
    subset: &[usize],
    observed: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<OptimalCorrection> {
    let problem = CorrectionProblem::new(fs, model, deformer, xi, target, index, subset)?;
    optimal_correction(&problem, observed, cfg)
}
