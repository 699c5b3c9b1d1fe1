//! Planar serial-arm kinematics.
//!
//! Joint `i` rotates link `i` relative to link `i - 1`; the end-effector
//! orientation is the cumulative sum of all joint angles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    link_lengths: Vec<f64>,
    base: [f64; 2],
}

impl ArmModel {
    pub fn new(link_lengths: Vec<f64>, base: [f64; 2]) -> Result<Self> {
        if link_lengths.is_empty() {
            return Err(Error::Config("arm needs at least one link".into()));
        }
        if let Some(l) = link_lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!("link length {l} must be positive")));
        }
        if !base.iter().all(|b| b.is_finite()) {
            return Err(Error::Config("base position must be finite".into()));
        }
        Ok(Self { link_lengths, base })
    }

    pub fn n_links(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn base(&self) -> Vector2<f64> {
        Vector2::new(self.base[0], self.base[1])
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.n_links() {
            return Err(Error::Dimension {
                expected: self.n_links(),
                got: q.len(),
                context: "joint configuration",
            });
        }
        Ok(())
    }

    /// Joint positions from base through end-effector plus the end-effector angle.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<ArmPose> {
        self.check(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &[f64]) -> ArmPose {
        let mut points = Vec::with_capacity(q.len() + 1);
        let mut p = self.base();
        let mut angle = 0.0;
        points.push(p);
        for (len, qi) in self.link_lengths.iter().zip(q) {
            angle += qi;
            p += Vector2::new(angle.cos(), angle.sin()) * *len;
            points.push(p);
        }
        ArmPose {
            points,
            ee_angle: angle,
        }
    }

    /// Jacobian of `[ee_x, ee_y, ee_angle]` with respect to the joint angles (3 x n).
    pub fn ee_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.check(q)?;
        Ok(self.jacobian_unchecked(q))
    }

    pub(crate) fn jacobian_unchecked(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.n_links();
        let pose = self.fk_unchecked(q);
        let ee = pose.end_effector();
        let mut j = DMatrix::zeros(3, n);
        for i in 0..n {
            // column i: rotation about joint i moves every point beyond it
            let r = ee - pose.points[i];
            j[(0, i)] = -r.y;
            j[(1, i)] = r.x;
            j[(2, i)] = 1.0;
        }
        j
    }
}

/// Output of forward kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmPose {
    /// `n_links + 1` points, base first.
    pub points: Vec<Vector2<f64>>,
    pub ee_angle: f64,
}

impl ArmPose {
    pub fn end_effector(&self) -> Vector2<f64> {
        *self.points.last().expect("pose has at least the base point")
    }
}

/// Joint angles of the arm, normalized to `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig(Vec<f64>);

impl JointConfig {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if !angles.iter().all(|a| a.is_finite()) {
            return Err(Error::Domain("joint angles must be finite".into()));
        }
        Ok(Self(angles.into_iter().map(wrap_angle).collect()))
    }

    pub fn angles(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_link() -> ArmModel {
        ArmModel::new(vec![1.0, 1.0], [0.5, -0.25]).unwrap()
    }

    // Chained homogeneous transforms, one link at a time.
    fn chained_fk(lengths: &[f64], base: [f64; 2], q: &[f64]) -> ([f64; 2], f64) {
        let mut t = [[1.0, 0.0, base[0]], [0.0, 1.0, base[1]], [0.0, 0.0, 1.0]];
        for (l, a) in lengths.iter().zip(q) {
            let (s, c) = a.sin_cos();
            let rot = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            let trans = [[1.0, 0.0, *l], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            let mut tmp = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        tmp[i][j] += t[i][k] * rot[k][j];
                    }
                }
            }
            t = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        t[i][j] += tmp[i][k] * trans[k][j];
                    }
                }
            }
        }
        ([t[0][2], t[1][2]], t[1][0].atan2(t[0][0]))
    }

    #[test]
    fn straight_arm_along_x() {
        let arm = two_link();
        let pose = arm.forward_kinematics(&[0.0, 0.0]).unwrap();
        assert_eq!(pose.points.len(), 3);
        assert_abs_diff_eq!(pose.end_effector().x, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pose.end_effector().y, -0.25, epsilon = 1e-15);
        assert_eq!(pose.ee_angle, 0.0);
    }

    #[test]
    fn quarter_turn_points_up() {
        let arm = two_link();
        let pose = arm.forward_kinematics(&[PI / 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(pose.end_effector().x, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.end_effector().y, 1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.ee_angle, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let arm = two_link();
        assert!(matches!(
            arm.forward_kinematics(&[0.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(arm.ee_jacobian(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn jacobian_at_zero() {
        let arm = ArmModel::new(vec![1.0, 1.0], [0.0, 0.0]).unwrap();
        let j = arm.ee_jacobian(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(j[(1, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 1)], 1.0, epsilon = 1e-15);
        assert_eq!(j[(2, 0)], 1.0);
        assert_eq!(j[(2, 1)], 1.0);
        assert_abs_diff_eq!(j[(0, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn last_column_only_moves_last_link() {
        let arm = ArmModel::new(vec![0.7, 0.4, 0.3], [0.0, 0.0]).unwrap();
        let q = [0.3, -1.1, 0.8];
        let j = arm.ee_jacobian(&q).unwrap();
        let pose = arm.fk_unchecked(&q);
        let r = pose.end_effector() - pose.points[2];
        assert_abs_diff_eq!(j[(0, 2)], -r.y, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 2)], r.x, epsilon = 1e-15);
        // moving the last joint does not move the elbow points
        let mut q2 = q;
        q2[2] += 0.3;
        let pose2 = arm.fk_unchecked(&q2);
        for k in 0..3 {
            assert_eq!(pose.points[k], pose2.points[k]);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        let q = JointConfig::new(vec![7.0, -7.0]).unwrap();
        assert!(q.angles().iter().all(|a| *a > -PI && *a <= PI));
        assert!(JointConfig::new(vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn fk_matches_chained_transforms(q in proptest::collection::vec(-PI..PI, 3)) {
            let lengths = vec![0.5, 0.4, 0.3];
            let arm = ArmModel::new(lengths.clone(), [0.1, 0.2]).unwrap();
            let pose = arm.forward_kinematics(&q).unwrap();
            let (ee, ang) = chained_fk(&lengths, [0.1, 0.2], &q);
            prop_assert!((pose.end_effector().x - ee[0]).abs() < 1e-12);
            prop_assert!((pose.end_effector().y - ee[1]).abs() < 1e-12);
            prop_assert!((wrap_angle(pose.ee_angle - ang)).abs() < 1e-12);
        }

        #[test]
        fn fk_is_periodic_and_within_reach(q in proptest::collection::vec(-PI..PI, 3), j in 0usize..3) {
            let arm = ArmModel::new(vec![0.5, 0.4, 0.3], [0.0, 0.0]).unwrap();
            let a = arm.forward_kinematics(&q).unwrap();
            let mut q2 = q.clone();
            q2[j] += 2.0 * PI;
            let b = arm.forward_kinematics(&q2).unwrap();
            prop_assert!((a.end_effector() - b.end_effector()).norm() < 1e-12);
            prop_assert!((a.end_effector() - arm.base()).norm() <= arm.reach() + 1e-12);
        }

        #[test]
        fn jacobian_matches_central_differences(q in proptest::collection::vec(-PI..PI, 3)) {
            let arm = ArmModel::new(vec![0.5, 0.4, 0.3], [0.0, 0.0]).unwrap();
            let j = arm.ee_jacobian(&q).unwrap();
            let h = 1e-6;
            for c in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[c] += h;
                qm[c] -= h;
                let p = arm.fk_unchecked(&qp);
                let m = arm.fk_unchecked(&qm);
                let fd = [
                    (p.end_effector().x - m.end_effector().x) / (2.0 * h),
                    (p.end_effector().y - m.end_effector().y) / (2.0 * h),
                    (p.ee_angle - m.ee_angle) / (2.0 * h),
                ];
                for r in 0..3 {
                    prop_assert!((j[(r, c)] - fd[r]).abs() < 1e-5);
                }
            }
        }
    }
}
