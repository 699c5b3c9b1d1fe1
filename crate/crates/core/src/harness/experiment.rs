//! The strategy × relevance grid of learning episodes.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Relevance, TaskSection};
use super::derive_seed;
use crate::error::{Error, Result};
use crate::features::FeatureCount;
use crate::human::SimHuman;
use crate::learner::Strategy;
use crate::rationality::RationalityModel;
use crate::scenario::Scenario;
use crate::session::{AuditRecord, Session};

pub const SCHEMA_VERSION: u32 = 1;

/// Result of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub task: String,
    pub relevance: Relevance,
    pub strategy: Strategy,
    pub episode: usize,
    pub seed: u64,
    pub audits: Vec<AuditRecord>,
    pub theta_trace: Vec<Vec<f64>>,
    pub theta_final: Vec<f64>,
    /// `|Phi(plan(theta*)) - Phi(plan(theta_final))|_1` over all features.
    pub regret: f64,
    /// Same distance for the trajectory actually executed, corrections included.
    pub regret_executed: f64,
    pub path_length: f64,
    /// Whether the plan under `theta_final` met the planner tolerance.
    pub final_plan_converged: bool,
}

/// An episode that raised an error; excluded from aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub task: String,
    pub strategy: Strategy,
    pub episode: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentRun {
    pub trials: Vec<TrialRecord>,
    pub quarantined: Vec<Quarantined>,
}

/// Fixed per-task quantities shared by every episode.
#[derive(Debug, Clone)]
pub struct TaskSetup {
    pub index: usize,
    pub task: TaskSection,
    /// Weights of the simulated human: the task's intent on its corrected feature.
    pub human_theta: Vec<f64>,
    pub theta0: Vec<f64>,
    /// Features of the reference plan under the known part of `theta*`.
    pub reference: FeatureCount,
}

impl TaskSetup {
    pub fn new(cfg: &ExperimentConfig, sc: &Scenario, name: &str) -> Result<Self> {
        let index = cfg
            .experiment
            .tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("no task named `{name}`")))?;
        let task = cfg.experiment.tasks[index].clone();
        let reference_plan = sc.plan(&task.theta_star_known(&sc.fs))?;
        let target = sc.fs.index_by_name(&task.corrected_feature)?;
        let mut human_theta = vec![0.0; sc.fs.len()];
        human_theta[target] = *cfg
            .human
            .intent
            .get(&task.corrected_feature)
            .ok_or_else(|| Error::Config(format!("no human.intent for `{}`", task.corrected_feature)))?;
        Ok(Self {
            index,
            human_theta,
            theta0: task.theta0_known(&sc.fs),
            reference: sc.features(&reference_plan.trajectory)?,
            task,
        })
    }

    pub fn episode_seed(&self, cfg: &ExperimentConfig, episode: usize) -> u64 {
        derive_seed(cfg.experiment.seed, &[self.index as u64, episode as u64])
    }

    /// The simulated human of one episode; both strategies meet the same one.
    pub fn human(&self, cfg: &ExperimentConfig, episode: usize) -> Result<SimHuman> {
        SimHuman::new(
            self.human_theta.clone(),
            cfg.human.beta,
            cfg.human.effort_weight,
            self.episode_seed(cfg, episode),
        )
    }

    /// Summarizes a finished session.
    pub fn record(&self, session: &Session, episode: usize, seed: u64) -> Result<TrialRecord> {
        let sc = session.scenario();
        let final_plan = sc.plan(session.theta())?;
        let regret = self.reference.sub(&sc.features(&final_plan.trajectory)?).l1_norm();
        let regret_executed = self.reference.sub(&sc.features(session.trajectory())?).l1_norm();
        Ok(TrialRecord {
            schema_version: SCHEMA_VERSION,
            task: self.task.name.clone(),
            relevance: self.task.relevance,
            strategy: session.strategy(),
            episode,
            seed,
            audits: session.audits().to_vec(),
            theta_trace: session.theta_trace().to_vec(),
            theta_final: session.theta().to_vec(),
            regret,
            regret_executed,
            path_length: session.path_length(),
            final_plan_converged: final_plan.converged,
        })
    }
}

/// Plans under `theta0`, lets the human push at every configured waypoint of
/// the current trajectory, and records the outcome.
pub fn run_episode(
    cfg: &ExperimentConfig,
    sc: &Arc<Scenario>,
    model: Option<&Arc<RationalityModel>>,
    setup: &TaskSetup,
    strategy: Strategy,
    episode: usize,
) -> Result<TrialRecord> {
    let seed = setup.episode_seed(cfg, episode);
    let mut human = setup.human(cfg, episode)?;
    let mut session = Session::new(sc.clone(), model.cloned(), cfg.learner, strategy, setup.theta0.clone())?;
    for &index in &cfg.experiment.correction_indices {
        let u = human.sample_correction(sc.push_context(), session.trajectory(), index)?;
        session.process_correction(&u)?;
    }
    setup.record(&session, episode, seed)
}

/// Runs every task under both strategies. Failed episodes are quarantined
/// and logged, never silently dropped.
pub fn run_experiment(cfg: &ExperimentConfig, model: &RationalityModel) -> Result<ExperimentRun> {
    let sc = Arc::new(cfg.scenario()?);
    let model = Arc::new(model.clone());
    let setups: Vec<TaskSetup> = cfg
        .experiment
        .tasks
        .iter()
        .map(|t| TaskSetup::new(cfg, &sc, &t.name))
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for setup in &setups {
        for strategy in [Strategy::Adaptive, Strategy::Fixed] {
            for episode in 0..cfg.experiment.episodes {
                jobs.push((setup, strategy, episode));
            }
        }
    }
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(setup, strategy, episode)| {
            run_episode(cfg, &sc, Some(&model), setup, strategy, episode).map_err(|e| Quarantined {
                task: setup.task.name.clone(),
                strategy,
                episode,
                seed: setup.episode_seed(cfg, episode),
                error: e.to_string(),
            })
        })
        .collect();
    let mut run = ExperimentRun::default();
    for outcome in outcomes {
        match outcome {
            Ok(t) => run.trials.push(t),
            Err(q) => {
                log::warn!("quarantined {} {} episode {}: {}", q.task, q.strategy.name(), q.episode, q.error);
                run.quarantined.push(q);
            }
        }
    }
    let audits = || run.trials.iter().flat_map(|t| &t.audits);
    log::info!(
        "non-converged: {} final plans, {} replans, {} gated updates, {} minimal-effort solves",
        run.trials.iter().filter(|t| !t.final_plan_converged).count(),
        audits().filter(|a| !a.replan_converged).count(),
        audits().filter(|a| !a.update_converged).count(),
        audits().flat_map(|a| &a.solve_converged).filter(|c| !**c).count()
    );
    Ok(run)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correct_start_without_pushes_has_zero_regret() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.correction_indices.clear();
        let sc = Arc::new(cfg.scenario().unwrap());
        let mut setup = TaskSetup::new(&cfg, &sc, "table_height").unwrap();
        setup.theta0 = setup.task.theta_star_known(&sc.fs);
        let t = run_episode(&cfg, &sc, None, &setup, Strategy::Fixed, 0).unwrap();
        assert_eq!(t.regret, 0.0);
        assert_eq!(t.regret_executed, 0.0);
        assert_eq!(t.path_length, 0.0);
        assert!(t.audits.is_empty());
    }

    #[test]
    fn episode_is_deterministic_and_round_trips() {
        let cfg = ExperimentConfig::default();
        let sc = Arc::new(cfg.scenario().unwrap());
        let setup = TaskSetup::new(&cfg, &sc, "human_distance").unwrap();
        let a = run_episode(&cfg, &sc, None, &setup, Strategy::Fixed, 3).unwrap();
        let b = run_episode(&cfg, &sc, None, &setup, Strategy::Fixed, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.audits.len(), cfg.experiment.correction_indices.len());
        assert!(a.audits.iter().all(|r| r.rule == "fixed"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_jsonl(&path, std::slice::from_ref(&a)).unwrap();
        let back: Vec<TrialRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![a]);
    }

    #[test]
    fn unknown_task_is_rejected() {
        let cfg = ExperimentConfig::default();
        let sc = cfg.scenario().unwrap();
        assert!(matches!(TaskSetup::new(&cfg, &sc, "nope"), Err(Error::Config(_))));
    }
}
