//! Coverage and selection studies over repeated random datasets.
//!
//! Trial `t` of a run with seed `s` uses the base seed `s ^ t`; everything random in the
//! trial derives from it, so trials are independent and may run in any order.

use std::io::Write;

use anyhow::{Context, Result};
use bayesdice_core::baselines::{bernstein_interval, bootstrap_bc_interval, t_interval, wis_per_trajectory};
use bayesdice_core::selection::{bandit_conjugate_oracle, Selection};
use bayesdice_core::{
    exact_policy_value, interval_from_samples, offline_select, point_estimate_ranking, sample_dataset,
    sample_policy_values, score_ranking, seed, train_posterior, BayesDiceConfig, PointStatistic, Ranking,
    RankingScoreSpec, SelectMode, TupleDataset, ValueSampleMatrix,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, Method, Resolved};

const TAG_DATA: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_DRAWS: u64 = 3;
const TAG_BOOTSTRAP: u64 = 4;
const TAG_ORACLE: u64 = 5;

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ trial as u64
}

pub const COVERAGE_HEADER: [&str; 9] = ["method", "target", "n", "confidence", "trial", "lo", "hi", "truth", "covered"];
pub const SELECTION_HEADER: [&str; 6] = ["method", "score_kind", "k", "n", "trial", "value"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub method: Method,
    #[serde(skip)]
    pub target_index: usize,
    pub target: String,
    pub n: usize,
    pub confidence: f64,
    pub trial: usize,
    pub lo: f64,
    pub hi: f64,
    pub truth: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub method: Method,
    pub spec: RankingScoreSpec,
    pub n: usize,
    pub trial: usize,
    /// Groundtruth score of the chosen ranking.
    pub value: f64,
    /// Chosen ranking as policy labels, best first.
    pub ranking: Vec<String>,
    /// Monte Carlo expected score, for methods that optimise it.
    pub expected_score: Option<f64>,
}

fn dataset(cfg: &ExperimentConfig, r: &Resolved, n: usize, trial: usize) -> Result<TupleDataset> {
    let s = seed::derive(trial_seed(cfg.seed, trial), &[n as u64, TAG_DATA]);
    let ds = sample_dataset(&r.mdp, &r.behavior, n / r.horizon, r.horizon, s)?;
    Ok(ds.with_behavior_label(cfg.behavior.label()))
}

/// Posterior value draws for target `i`, trained and sampled with trial-derived seeds.
fn bayesdice_draws(
    cfg: &ExperimentConfig,
    r: &Resolved,
    ds: &TupleDataset,
    n: usize,
    trial: usize,
    i: usize,
) -> Result<Vec<f64>> {
    let base = trial_seed(cfg.seed, trial);
    let train_cfg =
        BayesDiceConfig { seed: seed::derive(base, &[n as u64, TAG_TRAIN, i as u64]), ..cfg.bayesdice.clone() };
    let posterior = train_posterior(ds, &r.targets[i], &r.features, &train_cfg)
        .with_context(|| format!("training target {} (n = {n}, trial {trial})", r.target_labels[i]))?;
    Ok(sample_policy_values(&posterior, ds, cfg.num_draws, seed::derive(base, &[n as u64, TAG_DRAWS, i as u64]))?)
}

fn truths(r: &Resolved) -> Result<Vec<f64>> {
    Ok(r.targets.iter().map(|t| exact_policy_value(&r.mdp, t)).collect::<bayesdice_core::Result<_>>()?)
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.dataset_sizes.iter().flat_map(|&n| (0..cfg.trials).map(move |t| (n, t))).collect()
}

pub fn run_coverage(cfg: &ExperimentConfig) -> Result<Vec<CoverageRow>> {
    anyhow::ensure!(cfg.experiment == ExperimentKind::Coverage, "config is not a coverage experiment");
    let r = cfg.resolve()?;
    let truth = truths(&r)?;
    let per_job: Vec<Vec<CoverageRow>> =
        jobs(cfg).into_par_iter().map(|(n, trial)| coverage_trial(cfg, &r, &truth, n, trial)).collect::<Result<_>>()?;
    let mut rows: Vec<CoverageRow> = per_job.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.method, a.n, a.trial, a.target_index)
            .cmp(&(b.method, b.n, b.trial, b.target_index))
            .then(a.confidence.total_cmp(&b.confidence))
    });
    Ok(rows)
}

fn coverage_trial(
    cfg: &ExperimentConfig,
    r: &Resolved,
    truth: &[f64],
    n: usize,
    trial: usize,
) -> Result<Vec<CoverageRow>> {
    let ds = dataset(cfg, r, n, trial)?;
    let mut rows = Vec::new();
    for (i, target) in r.targets.iter().enumerate() {
        let mut push = |method: Method, confidence: f64, (lo, hi): (f64, f64)| {
            rows.push(CoverageRow {
                method,
                target_index: i,
                target: r.target_labels[i].clone(),
                n,
                confidence,
                trial,
                lo,
                hi,
                truth: truth[i],
                covered: lo <= truth[i] && truth[i] <= hi,
            })
        };
        let wis = if cfg.methods.iter().any(|m| matches!(m, Method::WisT | Method::WisBernstein | Method::WisBootstrap))
        {
            Some(wis_per_trajectory(&ds, &r.behavior, target, r.mdp.gamma())?)
        } else {
            None
        };
        for &method in &cfg.methods {
            if method == Method::Bayesdice {
                let draws = bayesdice_draws(cfg, r, &ds, n, trial, i)?;
                for &c in &cfg.confidence_levels {
                    push(method, c, interval_from_samples(&draws, c)?);
                }
                continue;
            }
            let est = wis.as_ref().expect("computed for interval baselines");
            for (j, &c) in cfg.confidence_levels.iter().enumerate() {
                let interval = match method {
                    Method::WisT => t_interval(est, c)?,
                    Method::WisBernstein => bernstein_interval(est, c)?,
                    Method::WisBootstrap => {
                        let s =
                            seed::derive(trial_seed(cfg.seed, trial), &[n as u64, TAG_BOOTSTRAP, i as u64, j as u64]);
                        bootstrap_bc_interval(est, c, cfg.bootstrap_resamples, s)?
                    }
                    other => unreachable!("{other} rejected by validation"),
                };
                push(method, c, interval);
            }
        }
    }
    Ok(rows)
}

pub fn run_selection(cfg: &ExperimentConfig) -> Result<Vec<SelectionRow>> {
    anyhow::ensure!(cfg.experiment == ExperimentKind::Selection, "config is not a selection experiment");
    let r = cfg.resolve()?;
    let truth = truths(&r)?;
    let per_job: Vec<Vec<SelectionRow>> = jobs(cfg)
        .into_par_iter()
        .map(|(n, trial)| selection_trial(cfg, &r, &truth, n, trial))
        .collect::<Result<_>>()?;
    let mut rows: Vec<SelectionRow> = per_job.into_iter().flatten().collect();
    let spec_pos = |s: &RankingScoreSpec| cfg.ranking_scores.iter().position(|x| x == s);
    rows.sort_by_key(|row| (row.method, row.n, row.trial, spec_pos(&row.spec)));
    Ok(rows)
}

fn selection_trial(
    cfg: &ExperimentConfig,
    r: &Resolved,
    truth: &[f64],
    n: usize,
    trial: usize,
) -> Result<Vec<SelectionRow>> {
    let ds = dataset(cfg, r, n, trial)?;
    let needs_posterior = cfg.methods.iter().any(|m| *m != Method::Oracle);
    let posterior = if needs_posterior {
        let rows = (0..r.targets.len()).map(|i| bayesdice_draws(cfg, r, &ds, n, trial, i)).collect::<Result<_>>()?;
        Some(ValueSampleMatrix::new(r.target_labels.clone(), rows)?)
    } else {
        None
    };
    let oracle = if cfg.methods.contains(&Method::Oracle) {
        let s = seed::derive(trial_seed(cfg.seed, trial), &[n as u64, TAG_ORACLE]);
        let (a, b) = cfg.oracle_prior;
        let mut m = bandit_conjugate_oracle(&ds, &r.targets, a, b, cfg.num_draws, s)?;
        m.policy_ids = r.target_labels.clone();
        Some(m)
    } else {
        None
    };
    let mut rows = Vec::new();
    for spec in &cfg.ranking_scores {
        for &method in &cfg.methods {
            let (ranking, expected_score) = match method {
                Method::Bayesdice | Method::Oracle => {
                    let samples = if method == Method::Oracle { &oracle } else { &posterior };
                    let samples = samples.as_ref().expect("built for this method");
                    let Selection { ranking, expected_score } =
                        offline_select(samples, spec, SelectMode::auto(spec, samples.num_policies()))?;
                    (ranking, Some(expected_score))
                }
                Method::MeanRank | Method::LowerBoundRank | Method::UpperBoundRank => {
                    let statistic = match method {
                        Method::MeanRank => PointStatistic::Mean,
                        Method::LowerBoundRank => PointStatistic::MeanMinusStd,
                        _ => PointStatistic::MeanPlusStd,
                    };
                    (point_estimate_ranking(posterior.as_ref().expect("built for point rankings"), statistic), None)
                }
                other => unreachable!("{other} rejected by validation"),
            };
            rows.push(SelectionRow {
                method,
                spec: *spec,
                n,
                trial,
                value: score_ranking(&ranking, truth, spec)?,
                ranking: labels(&ranking, &r.target_labels),
                expected_score,
            });
        }
    }
    Ok(rows)
}

fn labels(ranking: &Ranking, ids: &[String]) -> Vec<String> {
    ranking.order.iter().map(|&i| ids[i].clone()).collect()
}

pub fn write_coverage_csv<W: Write>(rows: &[CoverageRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COVERAGE_HEADER)?;
    for row in rows {
        out.write_record([
            row.method.name().to_string(),
            row.target.clone(),
            row.n.to_string(),
            row.confidence.to_string(),
            row.trial.to_string(),
            row.lo.to_string(),
            row.hi.to_string(),
            row.truth.to_string(),
            u8::from(row.covered).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_selection_csv<W: Write>(rows: &[SelectionRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SELECTION_HEADER)?;
    for row in rows {
        out.write_record([
            row.method.name().to_string(),
            row.spec.kind.name().to_string(),
            row.spec.k.to_string(),
            row.n.to_string(),
            row.trial.to_string(),
            row.value.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One JSON object per line with the chosen ranking of every selection row.
pub fn write_rankings_jsonl<W: Write>(rows: &[SelectionRow], mut w: W) -> Result<()> {
    for row in rows {
        let record = serde_json::json!({
            "method": row.method,
            "score_kind": row.spec.kind,
            "k": row.spec.k,
            "n": row.n,
            "trial": row.trial,
            "ranking": row.ranking,
            "expected_score": row.expected_score,
        });
        writeln!(w, "{record}")?;
    }
    Ok(())
}
