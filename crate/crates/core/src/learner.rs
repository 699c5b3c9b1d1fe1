//! Relevance-gated weight updates.
//!
//! The adaptive rule solves the implicit MAP condition
//!
//! ```text
//! theta' = theta - alpha * g(theta'^T dPhi) * dPhi
//! g(s)   = p e^{-s} / (p e^{-s} + (1 - p) (lambda/pi)^{k/2} e^{-lambda |dPhi|^2})
//! ```
//!
//! with one gate per known feature. Every gate depends on `theta'` only
//! through the scalar `s = theta'^T dPhi`, so the solve is one-dimensional.
//! The fixed rule is the `p = 1` special case, `theta' = theta - alpha dPhi`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rationality::BetaMode;

pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_ITERS: usize = 200;
pub const FIXED_POINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Adaptive,
    Fixed,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Adaptive => "adaptive",
            Strategy::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Strategy::Adaptive),
            "fixed" => Ok(Strategy::Fixed),
            other => Err(Error::Config(format!("unknown learning strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerParams {
    pub alpha: f64,
    /// Precision of the feature noise under irrelevant corrections.
    pub lambda: f64,
    pub beta_max: f64,
    pub beta_mode: BetaMode,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            lambda: std::f64::consts::PI,
            beta_max: 1e3,
            beta_mode: BetaMode::PerFeature,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be nonnegative", self.alpha)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda {} must be positive", self.lambda)));
        }
        if !(self.beta_max.is_finite() && self.beta_max > 0.0) {
            return Err(Error::Config(format!("beta_max {} must be positive", self.beta_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub theta: Vec<f64>,
    pub alpha: f64,
}

impl WeightVector {
    pub fn new(theta: Vec<f64>, alpha: f64) -> Result<Self> {
        if theta.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("weights must be finite".into()));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Domain(format!("step size {alpha} must be nonnegative")));
        }
        Ok(Self { theta, alpha })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateContext {
    /// `Phi(xi_H) - Phi(xi_R)` over the known features.
    pub delta_phi: Vec<f64>,
    pub p_relevant: Vec<f64>,
    pub lambda: f64,
}

impl UpdateContext {
    pub fn new(delta_phi: Vec<f64>, p_relevant: Vec<f64>, lambda: f64) -> Result<Self> {
        if delta_phi.len() != p_relevant.len() {
            return Err(Error::Dimension {
                expected: delta_phi.len(),
                got: p_relevant.len(),
                context: "relevance probabilities",
            });
        }
        if delta_phi.iter().any(|d| !d.is_finite()) {
            return Err(Error::Domain("feature difference must be finite".into()));
        }
        if p_relevant.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("relevance probabilities must lie in [0, 1]".into()));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Domain(format!("noise precision {lambda} must be positive")));
        }
        Ok(Self {
            delta_phi,
            p_relevant,
            lambda,
        })
    }

    /// Same relevance for every feature.
    pub fn shared(delta_phi: Vec<f64>, p_relevant: f64, lambda: f64) -> Result<Self> {
        let n = delta_phi.len();
        Self::new(delta_phi, vec![p_relevant; n], lambda)
    }

    pub fn k(&self) -> usize {
        self.delta_phi.len()
    }

    fn delta_sq(&self) -> f64 {
        self.delta_phi.iter().map(|d| d * d).sum()
    }
}

/// `log[(lambda/pi)^{k/2} exp(-lambda |dPhi|^2)]`.
pub fn irrelevant_log_likelihood(ctx: &UpdateContext) -> f64 {
    0.5 * ctx.k() as f64 * (ctx.lambda / std::f64::consts::PI).ln() - ctx.lambda * ctx.delta_sq()
}

pub fn irrelevant_likelihood(ctx: &UpdateContext) -> f64 {
    irrelevant_log_likelihood(ctx).exp()
}

/// `exp(-theta^T dPhi)`.
pub fn relevant_likelihood(theta: &[f64], ctx: &UpdateContext) -> Result<f64> {
    Ok((-dot_checked(theta, &ctx.delta_phi)?).exp())
}

fn dot_checked(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: b.len(),
            got: a.len(),
            context: "weights against feature difference",
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Gate of one feature at `s = theta'^T dPhi`, a logistic in log space.
fn gate(p: f64, s: f64, log_irrelevant: f64) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    let log_rel = p.ln() - s;
    let log_irr = (1.0 - p).ln() + log_irrelevant;
    let z = log_irr - log_rel;
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapUpdate {
    pub weights: WeightVector,
    /// Gate factor per feature at the returned weights.
    pub gates: Vec<f64>,
    /// `|theta' - RHS(theta')|` at the returned weights.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `theta' = theta - alpha dPhi`.
pub fn fixed_update(theta_hat: &WeightVector, ctx: &UpdateContext) -> Result<WeightVector> {
    if theta_hat.theta.len() != ctx.k() {
        return Err(Error::Dimension {
            expected: ctx.k(),
            got: theta_hat.theta.len(),
            context: "weights against feature difference",
        });
    }
    let theta = theta_hat
        .theta
        .iter()
        .zip(&ctx.delta_phi)
        .map(|(t, d)| t - theta_hat.alpha * d)
        .collect();
    Ok(WeightVector {
        theta,
        alpha: theta_hat.alpha,
    })
}

/// Solves the gated MAP condition for `theta'`.
///
/// Damped fixed-point iteration on `s` first; if that stalls, safeguarded
/// Newton on `F(s) = s - s0 + alpha sum_i g_i(s) dPhi_i^2` inside the bracket
/// `[s0 - alpha |dPhi|^2, s0]`, where `F` changes sign. Should both fail, the
/// fixed-rule step is returned with `converged = false`.
pub fn map_update(theta_hat: &WeightVector, ctx: &UpdateContext) -> Result<MapUpdate> {
    let s0 = dot_checked(&theta_hat.theta, &ctx.delta_phi)?;
    let alpha = theta_hat.alpha;
    let log_irr = irrelevant_log_likelihood(ctx);
    let sq: Vec<f64> = ctx.delta_phi.iter().map(|d| d * d).collect();
    let gates_at = |s: f64| -> Vec<f64> { ctx.p_relevant.iter().map(|&p| gate(p, s, log_irr)).collect() };
    let image = |s: f64| -> f64 {
        let g = gates_at(s);
        s0 - alpha * g.iter().zip(&sq).map(|(g, d)| g * d).sum::<f64>()
    };
    let weights_at = |s: f64| -> (Vec<f64>, Vec<f64>) {
        let g = gates_at(s);
        let theta = theta_hat
            .theta
            .iter()
            .zip(&ctx.delta_phi)
            .zip(&g)
            .map(|((t, d), g)| t - alpha * g * d)
            .collect();
        (theta, g)
    };
    let residual_of = |theta: &[f64]| -> f64 {
        let s = theta.iter().zip(&ctx.delta_phi).map(|(a, b)| a * b).sum::<f64>();
        let (rhs, _) = weights_at(s);
        theta.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let finish = |s: f64, iterations: usize| -> Option<MapUpdate> {
        let (theta, gates) = weights_at(s);
        let residual = residual_of(&theta);
        (residual <= FIXED_POINT_TOL).then_some(MapUpdate {
            weights: WeightVector { theta, alpha },
            gates,
            residual,
            iterations,
            converged: true,
        })
    };

    let mut s = s0;
    for it in 1..=FIXED_POINT_ITERS {
        let next = image(s);
        let step = next - s;
        s += FIXED_POINT_DAMPING * step;
        if step.abs() <= FIXED_POINT_TOL * 1e-2 * (1.0 + s.abs()) {
            if let Some(done) = finish(s, it) {
                return Ok(done);
            }
        }
    }
    if let Some(done) = finish(s, FIXED_POINT_ITERS) {
        return Ok(done);
    }

    let f = |s: f64| s - image(s);
    let (mut lo, mut hi) = (s0 - alpha * sq.iter().sum::<f64>(), s0);
    let mut s = s.clamp(lo, hi);
    for it in 1..=FIXED_POINT_ITERS {
        let fs = f(s);
        if fs == 0.0 {
            break;
        }
        if fs < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        // F'(s) = 1 - alpha sum_i g_i (1 - g_i) dPhi_i^2
        let g = gates_at(s);
        let slope = 1.0 - alpha * g.iter().zip(&sq).map(|(g, d)| g * (1.0 - g) * d).sum::<f64>();
        let newton = s - fs / slope;
        s = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * (1.0 + s.abs()) || (fs / slope).abs() <= 1e-3 * FIXED_POINT_TOL {
            if let Some(done) = finish(s, FIXED_POINT_ITERS + it) {
                return Ok(done);
            }
        }
    }
    if let Some(done) = finish(s, 2 * FIXED_POINT_ITERS) {
        return Ok(done);
    }

    let fallback = fixed_update(theta_hat, ctx)?;
    let residual = residual_of(&fallback.theta);
    log::debug!("gated update did not converge (residual {residual:.3e}); applying the full step");
    Ok(MapUpdate {
        weights: fallback,
        gates: vec![1.0; ctx.k()],
        residual,
        iterations: 2 * FIXED_POINT_ITERS,
        converged: false,
    })
}
