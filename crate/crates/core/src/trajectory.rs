//! Trajectories and the acceleration-norm deformation operator.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T + 1` waypoints of `n` joint angles each, stored row-major.
///
/// Joint values are kept continuous (not wrapped) so that finite differences
/// along the trajectory stay meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    data: Vec<f64>,
    n: usize,
    dt: f64,
}

impl Trajectory {
    pub fn from_flat(data: Vec<f64>, n: usize, dt: f64) -> Result<Self> {
        if n == 0 || data.is_empty() || !data.len().is_multiple_of(n) {
            return Err(Error::Size(format!(
                "{} values do not form whole waypoints of {n} joints",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("trajectory contains non-finite values".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("timestep {dt} must be positive")));
        }
        Ok(Self { data, n, dt })
    }

    pub fn from_waypoints(waypoints: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        let n = waypoints.first().map(Vec::len).unwrap_or(0);
        if waypoints.iter().any(|w| w.len() != n) {
            return Err(Error::Size("waypoints have different joint counts".into()));
        }
        Self::from_flat(waypoints.concat(), n, dt)
    }

    /// Linear interpolation in joint space with `steps + 1` waypoints.
    pub fn straight_line(start: &[f64], goal: &[f64], steps: usize, dt: f64) -> Result<Self> {
        if start.len() != goal.len() {
            return Err(Error::Dimension {
                expected: start.len(),
                got: goal.len(),
                context: "goal configuration",
            });
        }
        if steps < 2 {
            return Err(Error::Size(format!("need T >= 2, got {steps}")));
        }
        let mut data = Vec::with_capacity((steps + 1) * start.len());
        for t in 0..=steps {
            let s = t as f64 / steps as f64;
            data.extend(start.iter().zip(goal).map(|(a, b)| a + s * (b - a)));
        }
        Self::from_flat(data, start.len(), dt)
    }

    /// Number of waypoints, `T + 1`.
    pub fn len(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of steps `T`.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn n_joints(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn waypoint(&self, t: usize) -> &[f64] {
        &self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn waypoint_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn iter(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.n)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_waypoints(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Waypoints `0..=index` of `self` followed by waypoints `1..` of `tail`.
    pub fn splice(&self, index: usize, tail: &Trajectory) -> Result<Trajectory> {
        if tail.n != self.n || index >= self.len() {
            return Err(Error::Size("cannot splice trajectories".into()));
        }
        let mut data = self.data[..(index + 1) * self.n].to_vec();
        data.extend_from_slice(&tail.data[self.n..]);
        Trajectory::from_flat(data, self.n, self.dt)
    }

    /// Waypoints `index..`.
    pub fn suffix(&self, index: usize) -> Result<Trajectory> {
        if index >= self.len() {
            return Err(Error::Size(format!("suffix start {index} out of range")));
        }
        Trajectory::from_flat(self.data[index * self.n..].to_vec(), self.n, self.dt)
    }

    /// Sum over steps of squared joint velocities, `sum |q_{t+1} - q_t|^2 / dt^2`.
    pub fn smoothness(&self) -> f64 {
        let inv = 1.0 / (self.dt * self.dt);
        self.data
            .chunks(self.n)
            .zip(self.data.chunks(self.n).skip(1))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x).powi(2)).sum::<f64>())
            .sum::<f64>()
            * inv
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A joint-torque push applied at one interior waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub torque: Vec<f64>,
    pub waypoint_index: usize,
}

impl Correction {
    pub fn new(torque: Vec<f64>, waypoint_index: usize) -> Result<Self> {
        if !torque.iter().all(|t| t.is_finite()) {
            return Err(Error::Domain("correction torque must be finite".into()));
        }
        Ok(Self {
            torque,
            waypoint_index,
        })
    }

    pub fn effort(&self) -> f64 {
        self.torque.iter().map(|t| t * t).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.torque.iter().all(|t| *t == 0.0)
    }
}

/// `xi_H = xi_R + mu * A^{-1} U_H` with `A = K^T K`, `K` the clamped
/// second-difference (acceleration) operator.
///
/// `A` acts identically on every joint, so it is stored as its `(T+1)`-square
/// time block; the full `(T+1)n` matrix is the Kronecker product with `I_n`.
#[derive(Debug, Clone)]
pub struct DeformationOperator {
    steps: usize,
    n: usize,
    mu: f64,
    time_block: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    // A^{-1} columns, filled once from the factorization
    inverse: DMatrix<f64>,
}

impl DeformationOperator {
    pub fn new(steps: usize, n: usize, mu: f64, dt: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Size(format!("need T >= 2, got {steps}")));
        }
        if n == 0 {
            return Err(Error::Size("need at least one joint".into()));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Config(format!("deformation gain {mu} must be positive")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("timestep {dt} must be positive")));
        }
        let size = steps + 1;
        let k = Self::clamped_second_difference(steps, dt);
        let a = k.transpose() * &k;
        let factor = Cholesky::new(a.clone())
            .ok_or_else(|| Error::Domain("acceleration norm is not positive definite".into()))?;
        let inverse = factor.solve(&DMatrix::identity(size, size));
        Ok(Self {
            steps,
            n,
            mu,
            time_block: a,
            factor,
            inverse,
        })
    }

    /// Rows: pin waypoint 0, interior accelerations with clamped endpoints, pin waypoint T.
    fn clamped_second_difference(steps: usize, dt: f64) -> DMatrix<f64> {
        let size = steps + 1;
        let inv = 1.0 / (dt * dt);
        let mut k = DMatrix::zeros(size, size);
        k[(0, 0)] = 1.0;
        k[(steps, steps)] = 1.0;
        for t in 1..steps {
            for (col, w) in [(t - 1, 1.0), (t, -2.0), (t + 1, 1.0)] {
                if col != 0 && col != steps {
                    k[(t, col)] = w * inv;
                }
            }
        }
        k
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_joints(&self) -> usize {
        self.n
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// The full `(T+1)n x (T+1)n` norm matrix, waypoint-major ordering.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.time_block.kronecker(&DMatrix::<f64>::identity(self.n, self.n))
    }

    pub fn time_block(&self) -> &DMatrix<f64> {
        &self.time_block
    }

    /// Solves `A x = b` for a stacked `(T+1)n` vector using the cached factor.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let size = self.steps + 1;
        if b.len() != size * self.n {
            return Err(Error::Dimension {
                expected: size * self.n,
                got: b.len(),
                context: "stacked trajectory vector",
            });
        }
        let rhs = DMatrix::from_fn(size, self.n, |t, j| b[t * self.n + j]);
        let x = self.factor.solve(&rhs);
        Ok((0..size * self.n).map(|i| x[(i / self.n, i % self.n)]).collect())
    }

    /// `mu * (A^{-1})[t, index]` for every waypoint `t`: the displacement of
    /// waypoint `t` per unit torque applied at `index`.
    pub fn response(&self, index: usize) -> Vec<f64> {
        self.inverse.column(index).iter().map(|g| self.mu * g).collect()
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index == 0 || index >= self.steps {
            return Err(Error::CorrectionPlacement {
                index,
                max: self.steps - 1,
            });
        }
        Ok(())
    }

    /// Deformed trajectory induced by a correction.
    pub fn deform(&self, xi: &Trajectory, u: &Correction) -> Result<Trajectory> {
        self.check_index(u.waypoint_index)?;
        if xi.len() != self.steps + 1 || xi.n_joints() != self.n {
            return Err(Error::Dimension {
                expected: (self.steps + 1) * self.n,
                got: xi.as_flat().len(),
                context: "trajectory size for deformer",
            });
        }
        if u.torque.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: u.torque.len(),
                context: "correction torque",
            });
        }
        Ok(self.deform_unchecked(xi, u.waypoint_index, &u.torque))
    }

    pub(crate) fn deform_unchecked(&self, xi: &Trajectory, index: usize, torque: &[f64]) -> Trajectory {
        let mut out = xi.clone();
        let col = self.inverse.column(index);
        for t in 1..self.steps {
            let g = self.mu * col[t];
            for (x, u) in out.waypoint_mut(t).iter_mut().zip(torque) {
                *x += g * u;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn wavy(steps: usize, n: usize) -> Trajectory {
        let flat = (0..(steps + 1) * n).map(|i| (i as f64 * 0.31).cos()).collect();
        Trajectory::from_flat(flat, n, 0.1).unwrap()
    }

    #[test]
    fn rejects_short_horizon() {
        assert!(matches!(
            DeformationOperator::new(1, 3, 0.1, 0.1),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn matrix_is_symmetric_positive_definite() {
        let d = DeformationOperator::new(10, 3, 0.1, 0.1).unwrap();
        let a = d.matrix();
        assert_eq!((&a - a.transpose()).abs().max(), 0.0);
        let eig = SymmetricEigen::new(a);
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn zero_torque_is_identity() {
        let d = DeformationOperator::new(10, 2, 0.1, 0.1).unwrap();
        let xi = wavy(10, 2);
        let u = Correction::new(vec![0.0, 0.0], 4).unwrap();
        assert_eq!(d.deform(&xi, &u).unwrap(), xi);
    }

    #[test]
    fn push_matches_dense_inverse_column() {
        let d = DeformationOperator::new(10, 2, 0.1, 0.1).unwrap();
        let xi = wavy(10, 2);
        let u = Correction::new(vec![1.0, 0.0], 5).unwrap();
        let out = d.deform(&xi, &u).unwrap();
        let inv = d.matrix().try_inverse().unwrap();
        for t in 0..=10 {
            for j in 0..2 {
                let disp = out.waypoint(t)[j] - xi.waypoint(t)[j];
                assert_abs_diff_eq!(disp, 0.1 * inv[(t * 2 + j, 5 * 2)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn placement_errors() {
        let d = DeformationOperator::new(10, 2, 0.1, 0.1).unwrap();
        let xi = wavy(10, 2);
        for idx in [0, 10, 11] {
            let u = Correction::new(vec![1.0, 1.0], idx).unwrap();
            assert!(matches!(
                d.deform(&xi, &u),
                Err(Error::CorrectionPlacement { .. })
            ));
        }
    }

    #[test]
    fn displacement_profile_has_a_single_peak() {
        let d = DeformationOperator::new(20, 1, 0.1, 0.1).unwrap();
        for idx in [3, 10, 16] {
            let r = d.response(idx);
            assert!(r[1..20].iter().all(|v| *v > 0.0));
            let peak = (0..=20).max_by(|a, b| r[*a].total_cmp(&r[*b])).unwrap();
            for t in 1..=peak {
                assert!(r[t] >= r[t - 1]);
            }
            for t in peak..20 {
                assert!(r[t] >= r[t + 1]);
            }
            // the peak sits between the push and the middle of the trajectory
            assert!(peak.min(10) <= idx.max(10) && peak >= idx.min(10) && peak <= idx.max(10));
        }
    }

    #[test]
    fn solve_matches_dense() {
        let d = DeformationOperator::new(6, 2, 0.1, 0.1).unwrap();
        let b: Vec<f64> = (0..14).map(|i| (i as f64).sin()).collect();
        let x = d.solve(&b).unwrap();
        let a = d.matrix();
        let ax = &a * nalgebra::DVector::from_vec(x);
        for i in 0..14 {
            assert_abs_diff_eq!(ax[i], b[i], epsilon = 1e-8 * a.abs().max());
        }
    }

    #[test]
    fn splice_and_smoothness() {
        let a = Trajectory::straight_line(&[0.0], &[1.0], 4, 0.5).unwrap();
        // four steps of 0.25 at dt 0.5: 4 * 0.0625 / 0.25
        assert_abs_diff_eq!(a.smoothness(), 1.0, epsilon = 1e-12);
        let b = Trajectory::straight_line(&[0.5], &[2.0], 2, 0.5).unwrap();
        let s = a.splice(2, &b).unwrap();
        assert_eq!(s.to_waypoints(), vec![vec![0.0], vec![0.25], vec![0.5], vec![1.25], vec![2.0]]);
    }

    proptest! {
        #[test]
        fn deformation_is_linear_and_pins_endpoints(
            u in proptest::collection::vec(-5.0..5.0f64, 3),
            idx in 1usize..12,
        ) {
            let d = DeformationOperator::new(12, 3, 0.1, 0.1).unwrap();
            let xi = wavy(12, 3);
            let one = d.deform(&xi, &Correction::new(u.clone(), idx).unwrap()).unwrap();
            let two = d.deform(&xi, &Correction::new(u.iter().map(|v| 2.0 * v).collect(), idx).unwrap()).unwrap();
            for i in 0..xi.as_flat().len() {
                let lin = xi.as_flat()[i] + 2.0 * (one.as_flat()[i] - xi.as_flat()[i]);
                prop_assert!((two.as_flat()[i] - lin).abs() <= 1e-12);
            }
            prop_assert_eq!(one.waypoint(0), xi.waypoint(0));
            prop_assert_eq!(one.waypoint(12), xi.waypoint(12));
        }
    }
}
