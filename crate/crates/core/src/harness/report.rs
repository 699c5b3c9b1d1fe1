//! Aggregates and CSV exports of experiment trials.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Relevance;
use super::experiment::TrialRecord;
use super::stats::{bootstrap_mean_ci, mann_whitney, mean, std_dev, Interval};
use crate::error::{Error, Result};
use crate::learner::Strategy;

pub const BOOTSTRAP_LEVEL: f64 = 0.95;
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const BOOTSTRAP_SEED: u64 = 17;
/// Largest relative gap between strategy means still counted as "no difference".
pub const RELEVANT_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Regret,
    PathLength,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Regret => "regret",
            Metric::PathLength => "path_length",
        }
    }

    fn of(self, t: &TrialRecord) -> f64 {
        match self {
            Metric::Regret => t.regret,
            Metric::PathLength => t.path_length,
        }
    }
}

/// Per (task, strategy) aggregate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub task: String,
    pub relevance: Relevance,
    pub strategy: Strategy,
    pub n: usize,
    pub regret_mean: f64,
    pub regret_std: f64,
    pub regret_ci_lo: f64,
    pub regret_ci_hi: f64,
    pub path_length_mean: f64,
    pub path_length_std: f64,
    pub path_length_ci_lo: f64,
    pub path_length_ci_hi: f64,
    pub regret_executed_mean: f64,
}

/// Adaptive against fixed on one task and metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task: String,
    pub relevance: Relevance,
    pub metric: Metric,
    pub adaptive_mean: f64,
    pub fixed_mean: f64,
    pub adaptive_ci_lo: f64,
    pub adaptive_ci_hi: f64,
    pub fixed_ci_lo: f64,
    pub fixed_ci_hi: f64,
    /// `|adaptive - fixed| / max(adaptive, fixed)`.
    pub relative_gap: f64,
    pub mann_whitney_p: f64,
    /// Irrelevant tasks: adaptive lower with disjoint intervals.
    /// Relevant tasks: relative gap within tolerance.
    pub pass: bool,
}

type Groups<'a> = BTreeMap<(String, Strategy), Vec<&'a TrialRecord>>;

fn group(trials: &[TrialRecord]) -> Groups<'_> {
    let mut groups: Groups = BTreeMap::new();
    for t in trials {
        groups.entry((t.task.clone(), t.strategy)).or_default().push(t);
    }
    groups
}

fn ci(values: &[f64]) -> Result<Interval> {
    bootstrap_mean_ci(values, BOOTSTRAP_LEVEL, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED)
}

pub fn summarize(trials: &[TrialRecord]) -> Result<Vec<ConditionSummary>> {
    group(trials)
        .into_iter()
        .map(|((task, strategy), rows)| {
            let regret: Vec<f64> = rows.iter().map(|t| t.regret).collect();
            let path: Vec<f64> = rows.iter().map(|t| t.path_length).collect();
            let executed: Vec<f64> = rows.iter().map(|t| t.regret_executed).collect();
            let (rci, pci) = (ci(&regret)?, ci(&path)?);
            Ok(ConditionSummary {
                task,
                relevance: rows[0].relevance,
                strategy,
                n: rows.len(),
                regret_mean: mean(&regret),
                regret_std: std_dev(&regret),
                regret_ci_lo: rci.lo,
                regret_ci_hi: rci.hi,
                path_length_mean: mean(&path),
                path_length_std: std_dev(&path),
                path_length_ci_lo: pci.lo,
                path_length_ci_hi: pci.hi,
                regret_executed_mean: mean(&executed),
            })
        })
        .collect()
}

pub fn compare(trials: &[TrialRecord]) -> Result<Vec<Comparison>> {
    let groups = group(trials);
    let tasks: Vec<String> = groups.keys().map(|(t, _)| t.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut out = Vec::new();
    for task in tasks {
        let (Some(a), Some(f)) = (
            groups.get(&(task.clone(), Strategy::Adaptive)),
            groups.get(&(task.clone(), Strategy::Fixed)),
        ) else {
            return Err(Error::Domain(format!("task `{task}` lacks one of the two strategies")));
        };
        for metric in [Metric::Regret, Metric::PathLength] {
            let av: Vec<f64> = a.iter().map(|t| metric.of(t)).collect();
            let fv: Vec<f64> = f.iter().map(|t| metric.of(t)).collect();
            let (am, fm) = (mean(&av), mean(&fv));
            let (aci, fci) = (ci(&av)?, ci(&fv)?);
            let scale = am.abs().max(fm.abs());
            let relative_gap = if scale == 0.0 { 0.0 } else { (am - fm).abs() / scale };
            let relevance = a[0].relevance;
            let pass = match relevance {
                Relevance::Irrelevant => am < fm && !aci.overlaps(&fci),
                Relevance::Relevant => relative_gap <= RELEVANT_TOLERANCE,
            };
            out.push(Comparison {
                task: task.clone(),
                relevance,
                metric,
                adaptive_mean: am,
                fixed_mean: fm,
                adaptive_ci_lo: aci.lo,
                adaptive_ci_hi: aci.hi,
                fixed_ci_lo: fci.lo,
                fixed_ci_hi: fci.hi,
                relative_gap,
                mann_whitney_p: mann_whitney(&av, &fv)?.p_value,
                pass,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct TrialRow<'a> {
    task: &'a str,
    relevance: Relevance,
    strategy: Strategy,
    episode: usize,
    seed: u64,
    corrections: usize,
    regret: f64,
    regret_executed: f64,
    path_length: f64,
    final_plan_converged: bool,
    theta_final: String,
}

#[derive(Serialize)]
struct PathRow<'a> {
    task: &'a str,
    strategy: Strategy,
    episode: usize,
    step: usize,
    theta: String,
}

#[derive(Serialize)]
struct CorrectionRow<'a> {
    task: &'a str,
    relevance: Relevance,
    strategy: Strategy,
    episode: usize,
    seq: usize,
    waypoint_index: usize,
    feature: &'a str,
    delta_phi: f64,
    beta_hat: f64,
    p_relevant: f64,
    gate: f64,
}

fn joined(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`, `comparisons.csv`, `trials.csv` and the plot data
/// (`theta_paths.csv`, `corrections.csv`) into `dir`. Returns the paths.
pub fn write_report(dir: &Path, trials: &[TrialRecord]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = ["summary.csv", "comparisons.csv", "trials.csv", "theta_paths.csv", "corrections.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_rows(&paths[0], summarize(trials)?)?;
    write_rows(&paths[1], compare(trials)?)?;
    write_rows(
        &paths[2],
        trials.iter().map(|t| TrialRow {
            task: &t.task,
            relevance: t.relevance,
            strategy: t.strategy,
            episode: t.episode,
            seed: t.seed,
            corrections: t.audits.len(),
            regret: t.regret,
            regret_executed: t.regret_executed,
            path_length: t.path_length,
            final_plan_converged: t.final_plan_converged,
            theta_final: joined(&t.theta_final),
        }),
    )?;
    write_rows(
        &paths[3],
        trials.iter().flat_map(|t| {
            t.theta_trace.iter().enumerate().map(move |(step, th)| PathRow {
                task: &t.task,
                strategy: t.strategy,
                episode: t.episode,
                step,
                theta: joined(th),
            })
        }),
    )?;
    write_rows(
        &paths[4],
        trials.iter().flat_map(|t| {
            t.audits.iter().flat_map(move |a| {
                a.features.iter().enumerate().map(move |(i, f)| CorrectionRow {
                    task: &t.task,
                    relevance: t.relevance,
                    strategy: t.strategy,
                    episode: t.episode,
                    seq: a.seq,
                    waypoint_index: a.waypoint_index,
                    feature: f,
                    delta_phi: a.delta_phi.get(i).copied().unwrap_or(0.0),
                    beta_hat: a.beta_hat.get(i).copied().unwrap_or(f64::NAN),
                    p_relevant: a.p_relevant.get(i).copied().unwrap_or(f64::NAN),
                    gate: a.gates.get(i).copied().unwrap_or(f64::NAN),
                })
            })
        }),
    )?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::SCHEMA_VERSION;

    fn trial(task: &str, relevance: Relevance, strategy: Strategy, episode: usize, regret: f64) -> TrialRecord {
        TrialRecord {
            schema_version: SCHEMA_VERSION,
            task: task.into(),
            relevance,
            strategy,
            episode,
            seed: episode as u64,
            audits: vec![],
            theta_trace: vec![vec![1.0, 1.0], vec![1.0, 1.0 + regret]],
            theta_final: vec![1.0, 1.0 + regret],
            regret,
            regret_executed: regret,
            path_length: regret,
            final_plan_converged: true,
        }
    }

    fn grid() -> Vec<TrialRecord> {
        let mut v = Vec::new();
        for e in 0..30 {
            let jitter = (e as f64 * 0.7).sin() * 0.05;
            v.push(trial("irr", Relevance::Irrelevant, Strategy::Adaptive, e, 0.2 + jitter));
            v.push(trial("irr", Relevance::Irrelevant, Strategy::Fixed, e, 1.0 + jitter));
            v.push(trial("rel", Relevance::Relevant, Strategy::Adaptive, e, 0.95 + jitter));
            v.push(trial("rel", Relevance::Relevant, Strategy::Fixed, e, 1.0 + jitter));
        }
        v
    }

    #[test]
    fn summary_groups_conditions() {
        let s = summarize(&grid()).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|c| c.n == 30 && c.regret_ci_lo <= c.regret_mean && c.regret_mean <= c.regret_ci_hi));
    }

    #[test]
    fn comparisons_apply_the_ordering_rules() {
        let c = compare(&grid()).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|c| c.pass), "{c:?}");
        let mut bad = grid();
        for t in bad.iter_mut().filter(|t| t.task == "rel" && t.strategy == Strategy::Adaptive) {
            t.regret = 0.1;
        }
        let c = compare(&bad).unwrap();
        assert!(!c.iter().find(|c| c.task == "rel" && c.metric == Metric::Regret).unwrap().pass);
    }

    #[test]
    fn missing_strategy_is_an_error() {
        let v: Vec<_> = grid().into_iter().filter(|t| t.strategy == Strategy::Fixed).collect();
        assert!(compare(&v).is_err());
    }

    #[test]
    fn report_files_have_headers() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_report(dir.path(), &grid()).unwrap();
        let summary = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(summary.starts_with("task,relevance,strategy,n,regret_mean,regret_std"));
        let trials = std::fs::read_to_string(&paths[2]).unwrap();
        assert_eq!(trials.lines().count(), 121);
    }
}
