mod logger;

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context};
use betagate::harness::calibration::{run_calibration, write_samples_csv};
use betagate::harness::config::{ExperimentConfig, DEFAULT_CONFIG_TOML};
use betagate::harness::experiment::{read_jsonl, run_experiment, write_jsonl, TrialRecord};
use betagate::harness::report::{compare, write_report};
use betagate::harness::server::{serve, Hub};
use betagate::rationality::RationalityModel;
use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

#[derive(Parser)]
#[command(name = "betagate", version, about = "Relevance-gated learning from physical corrections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set learner.alpha=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines log file instead of stderr.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value = "info")]
    log_level: LevelFilter,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate calibration corrections and fit the rationality model.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the strategy x relevance grid of episodes.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Rationality model; calibrates first when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Serve live sessions over newline-delimited JSON.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Rationality model; without one only the fixed rule is available.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Aggregate a trials file into CSV tables.
    Report {
        #[command(flatten)]
        common: Common,
        /// Trials written by `experiment` (defaults to <out>/trials.jsonl).
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Print the default config.
    DefaultConfig,
}

impl Common {
    fn setup(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        logger::init(self.log_level, self.log.as_deref())?;
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.overrides),
            None => ExperimentConfig::from_toml_with_overrides(DEFAULT_CONFIG_TOML, &self.overrides),
        }
        .context("loading config")?;
        cfg.validate()?;
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        Ok((cfg, out))
    }
}

fn prepare_out(out: &Path, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

fn calibrate(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<RationalityModel> {
    let run = run_calibration(cfg)?;
    let csv = out.join("calibration.csv");
    let model_path = out.join("model.json");
    write_samples_csv(&csv, &run.samples)?;
    run.model.save(&model_path)?;
    for (feature, cell) in &run.model.cells {
        log::info!(
            "cell {feature}: relevant df {:.3} scale {:.4e} (n={}), irrelevant df {:.3} scale {:.4e} (n={})",
            cell.relevant.df,
            cell.relevant.scale,
            cell.n_relevant,
            cell.irrelevant.df,
            cell.irrelevant.scale,
            cell.n_irrelevant
        );
    }
    log::info!("wrote {} and {}", csv.display(), model_path.display());
    Ok(run.model)
}

fn load_model(path: &Path) -> anyhow::Result<RationalityModel> {
    RationalityModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn report(trials: &[TrialRecord], out: &Path) -> anyhow::Result<()> {
    let paths = write_report(out, trials)?;
    for c in compare(trials)? {
        log::info!(
            "{} ({}) {}: adaptive {:.4} [{:.4}, {:.4}] fixed {:.4} [{:.4}, {:.4}] gap {:.3} p {:.2e} -> {}",
            c.task,
            c.relevance.name(),
            c.metric.name(),
            c.adaptive_mean,
            c.adaptive_ci_lo,
            c.adaptive_ci_hi,
            c.fixed_mean,
            c.fixed_ci_lo,
            c.fixed_ci_hi,
            c.relative_gap,
            c.mann_whitney_p,
            if c.pass { "pass" } else { "fail" }
        );
    }
    for p in paths {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Calibrate { common } => {
            let (cfg, out) = common.setup()?;
            prepare_out(&out, &cfg)?;
            calibrate(&cfg, &out)?;
        }
        Command::Experiment { common, model } => {
            let (cfg, out) = common.setup()?;
            prepare_out(&out, &cfg)?;
            let model = match model {
                Some(p) => load_model(&p)?,
                None => calibrate(&cfg, &out)?,
            };
            let run = run_experiment(&cfg, &model)?;
            let trials_path = out.join("trials.jsonl");
            write_jsonl(&trials_path, &run.trials)?;
            write_jsonl(&out.join("quarantined.jsonl"), &run.quarantined)?;
            log::info!(
                "{} trials, {} quarantined, wrote {}",
                run.trials.len(),
                run.quarantined.len(),
                trials_path.display()
            );
            report(&run.trials, &out)?;
        }
        Command::Serve { common, model } => {
            let (cfg, _) = common.setup()?;
            let model = model.as_deref().map(load_model).transpose()?;
            let addr = format!("{}:{}", cfg.server.host, cfg.server.port);
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            let hub = Arc::new(Hub::new(cfg, model)?);
            serve(hub, listener, Arc::new(AtomicBool::new(false)))?;
        }
        Command::Report { common, trials } => {
            let (_, out) = common.setup()?;
            let path = trials.unwrap_or_else(|| out.join("trials.jsonl"));
            let trials: Vec<TrialRecord> =
                read_jsonl(&path).with_context(|| format!("reading {}", path.display()))?;
            if trials.is_empty() {
                bail!("{} holds no trials", path.display());
            }
            report(&trials, &out)?;
        }
        Command::DefaultConfig => print!("{DEFAULT_CONFIG_TOML}"),
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        log::error!("{e:#}");
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
