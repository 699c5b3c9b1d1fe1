//! TOML configuration for calibration, experiments and the session server.
//!
//! Every table rejects unknown keys. Values may be overridden from the
//! command line with dotted paths (`learner.alpha=0.1`) before validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arm::ArmModel;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSet};
use crate::human::SamplerConfig;
use crate::learner::LearnerParams;
use crate::planner::PlannerConfig;
use crate::rationality::{SolverConfig, MIN_CELL_SAMPLES};
use crate::scenario::Scenario;

/// The configuration shipped with the repository.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmSection {
    pub link_lengths: Vec<f64>,
    pub base: [f64; 2],
}

impl Default for ArmSection {
    fn default() -> Self {
        Self {
            link_lengths: vec![0.5, 0.4, 0.3],
            base: [0.0, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub kinds: Vec<String>,
    pub known: Vec<String>,
    pub table_height: f64,
    pub human_position: [f64; 2],
    pub upright_angle: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            kinds: vec!["table".into(), "human".into(), "orientation".into()],
            known: vec!["table".into(), "orientation".into()],
            table_height: -0.5,
            human_position: [0.3, 0.2],
            upright_angle: std::f64::consts::FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub steps: usize,
    pub dt: f64,
    /// Deformation gain.
    pub mu: f64,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            steps: 20,
            dt: 0.1,
            mu: 0.1,
            start: vec![0.3, 0.9, 1.0],
            goal: vec![-0.6, 1.4, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HumanSection {
    pub effort_weight: f64,
    pub beta: f64,
    /// Signed weight a calibration human puts on the feature it corrects.
    pub intent: BTreeMap<String, f64>,
    /// Inclusive range of waypoints a calibration push may land on.
    pub push_window: [usize; 2],
}

impl Default for HumanSection {
    fn default() -> Self {
        Self {
            effort_weight: 5e-5,
            beta: 1e5,
            intent: [("table", 1.0), ("human", -1.0), ("orientation", 50.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            push_window: [4, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub trials_per_cell: usize,
    pub seed: u64,
    pub prior_relevant: f64,
    /// Known-feature weights of the robot plans the calibration humans correct,
    /// used in turn across trials. An all-zero entry stands for the straight line.
    pub robot_weights: Vec<BTreeMap<String, f64>>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            trials_per_cell: 100,
            seed: 7,
            prior_relevant: 0.5,
            robot_weights: vec![
                [("table".to_string(), 0.3), ("orientation".to_string(), 1.0)].into(),
                [("table".to_string(), 1.0), ("orientation".to_string(), 1.0)].into(),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

impl Relevance {
    pub fn name(self) -> &'static str {
        match self {
            Relevance::Relevant => "relevant",
            Relevance::Irrelevant => "irrelevant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    pub relevance: Relevance,
    /// The feature the simulated human pushes for, with its `human.intent` weight.
    pub corrected_feature: String,
    /// True weights over every feature; regret is measured against the plan
    /// under their known part.
    pub theta_star: BTreeMap<String, f64>,
    /// Robot's initial weights over the known features.
    pub theta0: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub episodes: usize,
    pub seed: u64,
    pub correction_indices: Vec<usize>,
    pub tasks: Vec<TaskSection>,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let map = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self {
            episodes: 50,
            seed: 2024,
            correction_indices: vec![5, 11],
            tasks: vec![
                TaskSection {
                    name: "table_height".into(),
                    relevance: Relevance::Relevant,
                    corrected_feature: "table".into(),
                    theta_star: map(&[("table", 1.0), ("human", 0.0), ("orientation", 1.0)]),
                    theta0: map(&[("table", 0.3), ("orientation", 1.0)]),
                },
                TaskSection {
                    name: "human_distance".into(),
                    relevance: Relevance::Irrelevant,
                    corrected_feature: "human".into(),
                    theta_star: map(&[("table", 1.0), ("human", -1.0), ("orientation", 1.0)]),
                    theta0: map(&[("table", 1.0), ("orientation", 1.0)]),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
    /// Milliseconds between frames at speed 1.
    pub tick_ms: u64,
    /// Waypoints advanced per tick.
    pub speed: f64,
    /// Task the server session runs.
    pub task: String,
    /// Largest torque norm accepted from a client.
    pub max_torque: f64,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 7878,
            tick_ms: 100,
            speed: 0.25,
            task: "table_height".into(),
            max_torque: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub arm: ArmSection,
    pub features: FeatureSection,
    pub trajectory: TrajectorySection,
    pub planner: PlannerConfig,
    pub solver: SolverConfig,
    pub sampler: SamplerConfig,
    pub learner: LearnerParams,
    pub human: HumanSection,
    pub calibration: CalibrationSection,
    pub experiment: EpisodeSection,
    pub server: ServerSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides (dotted keys, TOML values;
    /// bare words are taken as strings), then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn feature_set(&self) -> Result<FeatureSet> {
        let kinds = self
            .features
            .kinds
            .iter()
            .map(|k| k.parse::<FeatureKind>())
            .collect::<Result<Vec<_>>>()?;
        for name in &self.features.known {
            let kind: FeatureKind = name.parse()?;
            if !kinds.contains(&kind) {
                return Err(Error::Config(format!("known feature `{name}` is not in features.kinds")));
            }
        }
        let known = kinds
            .iter()
            .map(|k| self.features.known.iter().any(|n| n.parse::<FeatureKind>().ok() == Some(*k)))
            .collect();
        FeatureSet::new(
            kinds,
            known,
            self.features.table_height,
            self.features.human_position,
            self.features.upright_angle,
        )
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let fs = self.feature_set()?;
        let model = ArmModel::new(self.arm.link_lengths.clone(), self.arm.base)?;
        let t = &self.trajectory;
        Scenario::new(
            fs,
            model,
            t.start.clone(),
            t.goal.clone(),
            t.steps,
            t.dt,
            t.mu,
            self.planner,
            self.solver.clone(),
            self.sampler,
        )
    }

    pub fn task(&self, name: &str) -> Result<&TaskSection> {
        self.experiment
            .tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("no task named `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.feature_set()?;
        self.scenario()?;
        if self.arm.link_lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        let steps = self.trajectory.steps;
        self.learner.validate()?;
        check_solver(&self.solver)?;
        if self.planner.max_iters == 0 || !(self.planner.grad_tol > 0.0) || !(self.planner.smoothness >= 0.0) {
            return Err(Error::Config("planner needs iterations, a positive tolerance and nonnegative smoothness".into()));
        }
        if self.sampler.burn_in > self.sampler.steps {
            return Err(Error::Config("sampler burn-in exceeds its step count".into()));
        }
        let h = &self.human;
        if !(h.effort_weight.is_finite() && h.effort_weight > 0.0) {
            return Err(Error::Config("human.effort_weight must be positive".into()));
        }
        if !(h.beta > 0.0) {
            return Err(Error::Config("human.beta must be positive (inf allowed)".into()));
        }
        for kind in fs.kinds() {
            match h.intent.get(kind.name()) {
                Some(w) if w.is_finite() && *w != 0.0 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "human.intent needs a nonzero weight for `{}`",
                        kind.name()
                    )))
                }
            }
        }
        check_names(&fs, h.intent.keys(), "human.intent")?;
        let [lo, hi] = h.push_window;
        if lo == 0 || hi >= steps || lo > hi {
            return Err(Error::Config(format!("human.push_window must lie in [1, {}]", steps - 1)));
        }
        let c = &self.calibration;
        if c.trials_per_cell == 0 {
            return Err(Error::Config("calibration.trials_per_cell must be positive".into()));
        }
        if c.trials_per_cell < MIN_CELL_SAMPLES {
            log::warn!(
                "calibration.trials_per_cell = {} is below the {MIN_CELL_SAMPLES} samples each cell needs",
                c.trials_per_cell
            );
        }
        if !(c.prior_relevant > 0.0 && c.prior_relevant < 1.0) {
            return Err(Error::Config("calibration.prior_relevant must lie in (0, 1)".into()));
        }
        if c.robot_weights.is_empty() {
            return Err(Error::Config("calibration.robot_weights needs at least one entry".into()));
        }
        for w in &c.robot_weights {
            check_known(&fs, w.keys(), "calibration.robot_weights")?;
        }
        let e = &self.experiment;
        if e.episodes == 0 {
            return Err(Error::Config("experiment.episodes must be positive".into()));
        }
        if e.correction_indices.is_empty() {
            return Err(Error::Config("experiment.correction_indices is empty".into()));
        }
        for w in e.correction_indices.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("experiment.correction_indices must increase".into()));
            }
        }
        if let Some(&last) = e.correction_indices.last() {
            if e.correction_indices[0] == 0 || last >= steps {
                return Err(Error::Config(format!(
                    "experiment.correction_indices must lie in [1, {}]",
                    steps - 1
                )));
            }
        }
        for (i, t) in e.tasks.iter().enumerate() {
            if e.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Config(format!("duplicate task `{}`", t.name)));
            }
            let target = fs.index_by_name(&t.corrected_feature)?;
            if fs.is_known(target) != (t.relevance == Relevance::Relevant) {
                return Err(Error::Config(format!(
                    "task `{}` is {} but corrects `{}`, which the robot {}",
                    t.name,
                    t.relevance.name(),
                    t.corrected_feature,
                    if fs.is_known(target) { "knows" } else { "does not know" }
                )));
            }
            check_names(&fs, t.theta_star.keys(), "theta_star")?;
            check_known(&fs, t.theta0.keys(), "theta0")?;
            if t.theta_star.values().chain(t.theta0.values()).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("task `{}` has non-finite weights", t.name)));
            }
        }
        let s = &self.server;
        if s.tick_ms == 0 || !(s.speed > 0.0 && s.speed.is_finite()) || !(s.max_torque > 0.0) {
            return Err(Error::Config("server needs a positive tick, speed and torque limit".into()));
        }
        if !e.tasks.is_empty() {
            self.task(&s.task)?;
        }
        Ok(())
    }
}

impl TaskSection {
    /// `theta_star` over every feature of `fs`; missing entries are zero.
    pub fn theta_star_full(&self, fs: &FeatureSet) -> Vec<f64> {
        fs.kinds()
            .iter()
            .map(|k| self.theta_star.get(k.name()).copied().unwrap_or(0.0))
            .collect()
    }

    /// `theta_star` restricted to the known features.
    pub fn theta_star_known(&self, fs: &FeatureSet) -> Vec<f64> {
        let full = self.theta_star_full(fs);
        fs.known_indices().iter().map(|&i| full[i]).collect()
    }

    pub fn theta0_known(&self, fs: &FeatureSet) -> Vec<f64> {
        weights_over_known(fs, &self.theta0)
    }
}

pub(crate) fn weights_over_known(fs: &FeatureSet, map: &BTreeMap<String, f64>) -> Vec<f64> {
    fs.known_indices()
        .iter()
        .map(|&i| map.get(fs.kinds()[i].name()).copied().unwrap_or(0.0))
        .collect()
}

fn check_names<'a>(fs: &FeatureSet, names: impl Iterator<Item = &'a String>, what: &str) -> Result<()> {
    for name in names {
        fs.index_by_name(name)
            .map_err(|_| Error::Config(format!("{what}: unknown feature `{name}`")))?;
    }
    Ok(())
}

fn check_known<'a>(fs: &FeatureSet, names: impl Iterator<Item = &'a String>, what: &str) -> Result<()> {
    for name in names {
        let i = fs
            .index_by_name(name)
            .map_err(|_| Error::Config(format!("{what}: unknown feature `{name}`")))?;
        if !fs.is_known(i) {
            return Err(Error::Config(format!("{what}: `{name}` is not a known feature")));
        }
    }
    Ok(())
}

fn check_solver(s: &SolverConfig) -> Result<()> {
    if s.penalty_schedule.is_empty() || s.penalty_schedule.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Config("solver.penalty_schedule needs positive entries".into()));
    }
    if s.penalty_schedule.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("solver.penalty_schedule must not decrease".into()));
    }
    if !(s.residual_tol > 0.0) {
        return Err(Error::Config("solver.residual_tol must be positive".into()));
    }
    Ok(())
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key is present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| Error::Config(format!("override `{item}` has an empty key")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
