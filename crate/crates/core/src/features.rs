//! State features, trajectory feature counts and their gradients.
//!
//! Every feature is a squared distance, so all of them are nonnegative and
//! differentiable everywhere the arm kinematics are.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::arm::{wrap_angle, ArmModel, ArmPose};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `(ee_y - table_height)^2`
    Table,
    /// `|ee - human_position|^2`
    Human,
    /// `wrap(ee_angle - upright_angle)^2`
    Orientation,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Table => "table",
            FeatureKind::Human => "human",
            FeatureKind::Orientation => "orientation",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(FeatureKind::Table),
            "human" | "human_distance" => Ok(FeatureKind::Human),
            "orientation" => Ok(FeatureKind::Orientation),
            other => Err(Error::UnknownFeature(other.to_string())),
        }
    }
}

/// Per-trajectory feature sums, one entry per feature of a [`FeatureSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureCount(pub Vec<f64>);

impl FeatureCount {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sub(&self, other: &FeatureCount) -> FeatureCount {
        FeatureCount(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &FeatureCount) -> FeatureCount {
        FeatureCount(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn select(&self, indices: &[usize]) -> FeatureCount {
        FeatureCount(indices.iter().map(|&i| self.0[i]).collect())
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    kinds: Vec<FeatureKind>,
    known: Vec<bool>,
    pub table_height: f64,
    pub human_position: [f64; 2],
    pub upright_angle: f64,
}

impl FeatureSet {
    pub fn new(
        kinds: Vec<FeatureKind>,
        known: Vec<bool>,
        table_height: f64,
        human_position: [f64; 2],
        upright_angle: f64,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("feature set is empty".into()));
        }
        if kinds.len() != known.len() {
            return Err(Error::Dimension {
                expected: kinds.len(),
                got: known.len(),
                context: "known mask",
            });
        }
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(Error::Config(format!("duplicate feature `{k}`")));
            }
        }
        if !known.iter().any(|k| *k) {
            return Err(Error::Config("at least one feature must be known".into()));
        }
        Ok(Self {
            kinds,
            known,
            table_height,
            human_position,
            upright_angle,
        })
    }

    /// Table, human distance and orientation, with the human feature hidden.
    pub fn standard(table_height: f64, human_position: [f64; 2], upright_angle: f64) -> Self {
        Self::new(
            vec![FeatureKind::Table, FeatureKind::Human, FeatureKind::Orientation],
            vec![true, false, true],
            table_height,
            human_position,
            upright_angle,
        )
        .expect("standard feature set is valid")
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn known_mask(&self) -> &[bool] {
        &self.known
    }

    pub fn index_of(&self, kind: FeatureKind) -> Option<usize> {
        self.kinds.iter().position(|k| *k == kind)
    }

    pub fn index_by_name(&self, name: &str) -> Result<usize> {
        let kind: FeatureKind = name.parse()?;
        self.index_of(kind)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// Indices of the features inside the robot's hypothesis space.
    pub fn known_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.known[i]).collect()
    }

    pub fn is_known(&self, index: usize) -> bool {
        self.known[index]
    }

    /// Same features with a different hypothesis space.
    pub fn with_known(&self, known: Vec<bool>) -> Result<Self> {
        Self::new(
            self.kinds.clone(),
            known,
            self.table_height,
            self.human_position,
            self.upright_angle,
        )
    }

    fn human(&self) -> Vector2<f64> {
        Vector2::new(self.human_position[0], self.human_position[1])
    }

    fn phi_pose(&self, pose: &ArmPose) -> Vec<f64> {
        let ee = pose.end_effector();
        self.kinds
            .iter()
            .map(|k| match k {
                FeatureKind::Table => (ee.y - self.table_height).powi(2),
                FeatureKind::Human => (ee - self.human()).norm_squared(),
                FeatureKind::Orientation => wrap_angle(pose.ee_angle - self.upright_angle).powi(2),
            })
            .collect()
    }

    /// Feature values at a single configuration.
    pub fn phi(&self, model: &ArmModel, q: &[f64]) -> Result<Vec<f64>> {
        let pose = model.forward_kinematics(q)?;
        Ok(self.phi_pose(&pose))
    }

    /// Feature values and their joint-space gradients (features x joints).
    pub(crate) fn phi_and_gradient(&self, model: &ArmModel, q: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let pose = model.fk_unchecked(q);
        let jac = model.jacobian_unchecked(q);
        let ee = pose.end_effector();
        let n = model.n_links();
        let mut grad = DMatrix::zeros(self.len(), n);
        for (f, k) in self.kinds.iter().enumerate() {
            // d phi / d [ee_x, ee_y, ee_angle]
            let d = match k {
                FeatureKind::Table => [0.0, 2.0 * (ee.y - self.table_height), 0.0],
                FeatureKind::Human => {
                    let r = ee - self.human();
                    [2.0 * r.x, 2.0 * r.y, 0.0]
                }
                FeatureKind::Orientation => {
                    [0.0, 0.0, 2.0 * wrap_angle(pose.ee_angle - self.upright_angle)]
                }
            };
            for j in 0..n {
                grad[(f, j)] = d[0] * jac[(0, j)] + d[1] * jac[(1, j)] + d[2] * jac[(2, j)];
            }
        }
        (self.phi_pose(&pose), grad)
    }

    /// Sum of per-waypoint features along a trajectory.
    pub fn total_features(&self, model: &ArmModel, traj: &Trajectory) -> Result<FeatureCount> {
        if traj.n_joints() != model.n_links() {
            return Err(Error::Dimension {
                expected: model.n_links(),
                got: traj.n_joints(),
                context: "trajectory joints",
            });
        }
        let mut total = vec![0.0; self.len()];
        for q in traj.iter() {
            let pose = model.fk_unchecked(q);
            for (acc, v) in total.iter_mut().zip(self.phi_pose(&pose)) {
                *acc += v;
            }
        }
        Ok(FeatureCount(total))
    }

    /// `dPhi / d(waypoints)` as a `features x ((T+1) * n)` matrix.
    ///
    /// Endpoint waypoints are fixed, so their columns are zero.
    pub fn features_gradient(&self, model: &ArmModel, traj: &Trajectory) -> Result<DMatrix<f64>> {
        if traj.n_joints() != model.n_links() {
            return Err(Error::Dimension {
                expected: model.n_links(),
                got: traj.n_joints(),
                context: "trajectory joints",
            });
        }
        let n = traj.n_joints();
        let last = traj.len() - 1;
        let mut out = DMatrix::zeros(self.len(), traj.len() * n);
        for (t, q) in traj.iter().enumerate() {
            if t == 0 || t == last {
                continue;
            }
            let (_, g) = self.phi_and_gradient(model, q);
            out.view_mut((0, t * n), (self.len(), n)).copy_from(&g);
        }
        Ok(out)
    }
}
