//! Frequentist confidence intervals over per-trajectory importance-sampling estimates.
//!
//! Each logged trajectory yields one weighted (self-normalised) per-step importance
//! sampling estimate. Student-t, empirical-Bernstein and bias-corrected bootstrap
//! intervals are then built from that finite sample. Unlike the ratio posterior these
//! estimators need the behavior policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TupleDataset;
use crate::mdp::TabularPolicy;
use crate::{seed, stats, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEstimates {
    pub values: Vec<f64>,
    /// Bounds on any single estimate, used by the Bernstein interval.
    pub value_range: (f64, f64),
}

impl TrajectoryEstimates {
    pub fn new(values: Vec<f64>, value_range: (f64, f64)) -> Result<Self> {
        if !(value_range.0 <= value_range.1) || !value_range.0.is_finite() || !value_range.1.is_finite() {
            return Err(Error::InvalidArgument(format!("bad value range {value_range:?}")));
        }
        if values.iter().any(|v| !v.is_finite() || *v < value_range.0 || *v > value_range.1) {
            return Err(Error::InvalidArgument("estimate outside the value range".into()));
        }
        Ok(Self { values, value_range })
    }

    pub fn mean(&self) -> f64 {
        stats::mean(&self.values)
    }
}

/// Weighted per-step importance sampling, one normalised estimate per trajectory.
///
/// For trajectory `j` the estimate is `sum_t gamma^t wbar_t r_t / sum_t gamma^t` where
/// `w_t` is the cumulative importance ratio up to step `t` and `wbar_t` divides it by the
/// mean of `w_t` across trajectories. With rewards in `[0, 1]` every estimate lies in
/// `[0, max wbar]`, so the range upper bound is `max(1, max wbar)`; it is exactly 1 when
/// the behavior and target policies coincide.
pub fn wis_per_trajectory(
    ds: &TupleDataset,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    gamma: f64,
) -> Result<TrajectoryEstimates> {
    if ds.num_trajectories() == 0 {
        return Err(Error::Empty("trajectories"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside (0, 1]")));
    }
    let horizon = ds.meta.horizon;
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(ds.num_trajectories());
    for traj in ds.trajectories() {
        let mut w = 1.0;
        let mut row = Vec::with_capacity(traj.len());
        for t in traj {
            if !(0.0..=1.0).contains(&t.reward) {
                return Err(Error::InvalidArgument(format!("reward {} outside [0, 1]", t.reward)));
            }
            let p_target = target.prob(t.state, t.action);
            let p_behavior = behavior.prob(t.state, t.action);
            if p_behavior == 0.0 {
                if p_target > 0.0 {
                    return Err(Error::MissingSupport { state: t.state, action: t.action });
                }
                w = 0.0;
            } else {
                w *= p_target / p_behavior;
            }
            row.push(w);
        }
        weights.push(row);
    }
    let step_means: Vec<f64> =
        (0..horizon).map(|t| stats::mean(&weights.iter().map(|w| w[t]).collect::<Vec<_>>())).collect();
    let discount_total: f64 = (0..horizon).map(|t| gamma.powi(t as i32)).sum();
    let mut max_weight = 1.0_f64;
    let values = ds
        .trajectories()
        .zip(&weights)
        .map(|(traj, w)| {
            let mut total = 0.0;
            let mut discount = 1.0;
            for (t, step) in traj.iter().enumerate() {
                let normalised = if step_means[t] > 0.0 { w[t] / step_means[t] } else { 0.0 };
                max_weight = max_weight.max(normalised);
                total += discount * normalised * step.reward;
                discount *= gamma;
            }
            total / discount_total
        })
        .collect();
    TrajectoryEstimates::new(values, (0.0, max_weight))
}

fn check_interval_args(est: &TrajectoryEstimates, confidence: f64) -> Result<()> {
    if est.values.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least two estimates, got {}", est.values.len())));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence {confidence} outside (0, 1)")));
    }
    Ok(())
}

/// `mean +- t_{(1+c)/2, n-1} sd / sqrt(n)`.
pub fn t_interval(est: &TrajectoryEstimates, confidence: f64) -> Result<(f64, f64)> {
    check_interval_args(est, confidence)?;
    let n = est.values.len() as f64;
    let mean = est.mean();
    let half = stats::student_t_quantile(0.5 + confidence / 2.0, n - 1.0) * stats::sample_std(&est.values) / n.sqrt();
    Ok((mean - half, mean + half))
}

/// Empirical Bernstein interval, clipped to the value range:
/// `mean +- (sqrt(2 V ln(2/delta) / n) + 7 b ln(2/delta) / (3 (n - 1)))`.
pub fn bernstein_interval(est: &TrajectoryEstimates, confidence: f64) -> Result<(f64, f64)> {
    check_interval_args(est, confidence)?;
    let n = est.values.len() as f64;
    let log_term = (2.0 / (1.0 - confidence)).ln();
    let (lo, hi) = est.value_range;
    let b = hi - lo;
    let half =
        (2.0 * stats::sample_variance(&est.values) * log_term / n).sqrt() + 7.0 * b * log_term / (3.0 * (n - 1.0));
    let mean = est.mean();
    Ok(((mean - half).max(lo), (mean + half).min(hi)))
}

/// Bias-corrected percentile bootstrap of the mean.
///
/// `z0 = Phi^-1(P*(mean* < mean))`, counting ties as half; the interval endpoints are the
/// bootstrap quantiles at `Phi(2 z0 -+ z_{(1+c)/2})`.
pub fn bootstrap_bc_interval(
    est: &TrajectoryEstimates,
    confidence: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_interval_args(est, confidence)?;
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be positive".into()));
    }
    let n = est.values.len();
    let mean = est.mean();
    let mut rng = seed::rng(seed);
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| est.values[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let below = means.iter().filter(|&&m| m < mean).count() as f64;
    let ties = means.iter().filter(|&&m| m == mean).count() as f64;
    let frac = ((below + 0.5 * ties) / resamples as f64).clamp(0.5 / resamples as f64, 1.0 - 0.5 / resamples as f64);
    let z0 = if resamples == 1 { 0.0 } else { stats::normal_quantile(frac) };
    let z = stats::normal_quantile(0.5 + confidence / 2.0);
    let lo = stats::quantile_sorted(&means, stats::normal_cdf(2.0 * z0 - z));
    let hi = stats::quantile_sorted(&means, stats::normal_cdf(2.0 * z0 + z));
    Ok((lo, hi))
}

/// Plain percentile bootstrap of the mean (no bias correction), for comparison.
pub fn bootstrap_percentile_interval(
    est: &TrajectoryEstimates,
    confidence: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_interval_args(est, confidence)?;
    let n = est.values.len();
    let mut rng = seed::rng(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| est.values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((
        stats::quantile_sorted(&means, (1.0 - confidence) / 2.0),
        stats::quantile_sorted(&means, (1.0 + confidence) / 2.0),
    ))
}
