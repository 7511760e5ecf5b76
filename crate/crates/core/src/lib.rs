//! Bayesian off-policy evaluation and offline policy selection for tabular MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite MDPs, policy families and exact dynamic-programming oracles.
//! - [`data`]: behavior-policy datasets in tuple and trajectory views, JSON-lines I/O.
//! - [`bayesdice`]: variational posterior over stationary distribution correction
//!   ratios and Monte Carlo policy-value samples.
//! - [`baselines`]: weighted per-step importance sampling with Student-t,
//!   empirical-Bernstein and bias-corrected bootstrap intervals.
//! - [`selection`]: ranking scores, posterior ranking simulation and point-estimate
//!   rankings, plus the conjugate Beta reference for the two-armed bandit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bayesdice;
pub mod data;
mod error;
pub mod mdp;
pub mod seed;
pub mod selection;
pub mod stats;

pub use bayesdice::{
    interval_from_samples, sample_policy_values, train_posterior, BayesDiceConfig, FeatureMap, RatioPosterior,
    ValueSampleMatrix,
};
pub use data::{load_dataset, sample_dataset, save_dataset, DatasetMeta, Transition, TupleDataset};
pub use error::{Error, Result};
pub use mdp::{
    build_bandit, build_gridworld, exact_policy_value, exact_visitation, make_policy, GridworldKind, PolicyFamily,
    PolicyFamilySpec, RewardKind, TabularMdp, TabularPolicy,
};
pub use selection::{
    offline_select, point_estimate_ranking, score_ranking, PointStatistic, Ranking, RankingScoreKind, RankingScoreSpec,
    SelectMode,
};
