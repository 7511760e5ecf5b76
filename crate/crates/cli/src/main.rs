use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bayesdice_cli::config::ExperimentConfig;
use bayesdice_cli::experiment::{self, write_coverage_csv, write_rankings_jsonl, write_selection_csv};
use bayesdice_cli::report;
use bayesdice_core::bayesdice::PosteriorRecord;
use bayesdice_core::{
    interval_from_samples, load_dataset, sample_dataset, sample_policy_values, save_dataset, seed, stats,
    train_posterior, BayesDiceConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bayesdice", version, about = "Bayesian off-policy evaluation and policy selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; defaults to the config's `output`, then standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.out.is_some() {
            cfg.output.clone_from(&self.out);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Samples one behavior dataset from the config's environment.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of tuples; defaults to the first configured dataset size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fits the ratio posterior of one target on a saved dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Index into the config's target list.
        #[arg(long, default_value_t = 0)]
        target: usize,
    },
    /// Runs a coverage experiment and writes one CSV row per interval.
    Coverage {
        #[command(flatten)]
        common: Common,
    },
    /// Runs a selection experiment and writes one CSV row per chosen ranking.
    Select {
        #[command(flatten)]
        common: Common,
        /// Also writes the chosen rankings as JSON lines.
        #[arg(long)]
        rankings: Option<PathBuf>,
    },
    /// Prints per-method aggregates of a results CSV.
    Report { results: PathBuf },
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { common, n } => {
            let cfg = common.load()?;
            let r = cfg.resolve()?;
            let n = n.or(cfg.dataset_sizes.first().copied()).context("no dataset size given")?;
            anyhow::ensure!(
                n > 0 && n % r.horizon == 0,
                "n = {n} is not a positive multiple of the horizon {}",
                r.horizon
            );
            let ds = sample_dataset(&r.mdp, &r.behavior, n / r.horizon, r.horizon, cfg.seed)?
                .with_behavior_label(cfg.behavior.label());
            let out = cfg.output.context("gen-data needs --out")?;
            save_dataset(&ds, &out)?;
            eprintln!("wrote {} tuples to {}", ds.len(), out.display());
        }
        Command::Train { common, data, target } => {
            let cfg = common.load()?;
            let r = cfg.resolve()?;
            anyhow::ensure!(target < r.targets.len(), "target index {target} out of range");
            let ds = load_dataset(&data)?;
            anyhow::ensure!(
                ds.meta.num_states == r.mdp.num_states() && ds.meta.num_actions == r.mdp.num_actions(),
                "dataset does not match the configured environment"
            );
            let train_cfg = BayesDiceConfig { seed: cfg.seed, ..cfg.bayesdice.clone() };
            let posterior = train_posterior(&ds, &r.targets[target], &r.features, &train_cfg)?;
            let draws = sample_policy_values(&posterior, &ds, cfg.num_draws, seed::derive(cfg.seed, &[1]))?;
            let (lo, hi) = interval_from_samples(&draws, 0.95)?;
            println!(
                "{}: posterior mean value {:.6}, 95% interval [{lo:.6}, {hi:.6}]",
                r.target_labels[target],
                stats::mean(&draws)
            );
            if let Some(out) = &cfg.output {
                let record = PosteriorRecord {
                    posterior,
                    config: train_cfg,
                    env: ds.meta.env.clone(),
                    target: r.target_labels[target].clone(),
                };
                serde_json::to_writer_pretty(sink(Some(out))?, &record)?;
            }
        }
        Command::Coverage { common } => {
            let cfg = common.load()?;
            let rows = experiment::run_coverage(&cfg)?;
            write_coverage_csv(&rows, sink(cfg.output.as_deref())?)?;
        }
        Command::Select { common, rankings } => {
            let cfg = common.load()?;
            let rows = experiment::run_selection(&cfg)?;
            write_selection_csv(&rows, sink(cfg.output.as_deref())?)?;
            if let Some(path) = rankings {
                write_rankings_jsonl(&rows, sink(Some(&path))?)?;
            }
        }
        Command::Report { results } => print!("{}", report::summarize(&results)?.render()),
    }
    Ok(())
}
