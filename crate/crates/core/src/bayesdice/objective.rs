//! Bellman-flow residual embedding and the chance-constrained variational loss.
//!
//! With the quadratic conjugate `f*(beta) = |beta|^2 / 2` the inner maximisation over the
//! dual variable has the closed form `beta* = e(zeta)`, where
//!
//! ```text
//! e(zeta) = E_D[zeta(s, a) (gamma phibar(s') - phi(s, a))] + (1 - gamma) E_{mu0, pi}[phi]
//! ```
//!
//! and `phibar(s) = sum_a pi(a | s) phi(s, a)`. The loss is
//!
//! ```text
//! KL(q || p) + k E_q[|e(zeta)|^2 / 2] + k_n E_q[(E_D[zeta] - 1)^2]
//! ```
//!
//! Because `zeta` only depends on the pair `(s, a)`, tuples are aggregated per pair
//! into [`FlowStatistics`] before any posterior draw is evaluated.

use std::collections::BTreeMap;

use super::features::{sparse_dot, Accumulator, FeatureMap, SparseVec};
use super::posterior::{sigmoid, softplus, RatioPosterior};
use super::{BayesDiceConfig, WeightScaling};
use crate::data::Transition;
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::{Error, Result};

/// Contribution of one distinct state-action pair to the flow residual.
#[derive(Debug, Clone)]
pub struct PairGroup {
    pub state: usize,
    pub action: usize,
    pub features: SparseVec,
    /// Probability mass of the pair under the data distribution.
    pub weight: f64,
    /// `weight * (gamma E[phibar(s') | s, a] - phi(s, a))`.
    pub flow: SparseVec,
    /// `E_D[r 1{(s, a)}]`.
    pub reward: f64,
}

/// Sufficient statistics of a (weighted) batch for the residual embedding.
#[derive(Debug, Clone)]
pub struct FlowStatistics {
    dim: usize,
    groups: Vec<PairGroup>,
    /// `(1 - gamma) E_{mu0, pi}[phi]`, dense.
    initial_term: Vec<f64>,
}

fn check_policy(fm: &FeatureMap, target: &TabularPolicy) -> Result<()> {
    if target.num_states() != fm.num_states() || target.num_actions() != fm.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: fm.num_states() * fm.num_actions(),
            got: target.num_states() * target.num_actions(),
        });
    }
    Ok(())
}

/// Lazily computed `phibar(s)` for every state.
struct NextFeatures<'a> {
    fm: &'a FeatureMap,
    target: &'a TabularPolicy,
    cache: Vec<Option<SparseVec>>,
}

impl<'a> NextFeatures<'a> {
    fn new(fm: &'a FeatureMap, target: &'a TabularPolicy) -> Self {
        Self { fm, target, cache: vec![None; fm.num_states()] }
    }

    fn get(&mut self, state: usize) -> &SparseVec {
        let (fm, target) = (self.fm, self.target);
        self.cache[state].get_or_insert_with(|| fm.policy_features(state, target))
    }
}

/// Weight, reward sum and next-state weights of one `(s, a)` pair.
type PairAccumulator = (f64, f64, BTreeMap<usize, f64>);

impl FlowStatistics {
    /// Aggregates an empirical batch; every tuple carries weight `1 / len`.
    pub fn from_tuples(batch: &[Transition], target: &TabularPolicy, fm: &FeatureMap, gamma: f64) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        check_policy(fm, target)?;
        let inv = 1.0 / batch.len() as f64;
        let mut pairs: BTreeMap<(usize, usize), PairAccumulator> = BTreeMap::new();
        let mut starts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in batch {
            if t.state >= fm.num_states() || t.next_state >= fm.num_states() || t.init_state >= fm.num_states() {
                return Err(Error::DimensionMismatch { expected: fm.num_states(), got: t.state.max(t.next_state) + 1 });
            }
            if t.action >= fm.num_actions() {
                return Err(Error::DimensionMismatch { expected: fm.num_actions(), got: t.action + 1 });
            }
            let entry = pairs.entry((t.state, t.action)).or_default();
            entry.0 += inv;
            entry.1 += inv * t.reward;
            *entry.2.entry(t.next_state).or_default() += inv;
            *starts.entry(t.init_state).or_default() += inv;
        }
        let groups = pairs.into_iter().map(|((s, a), (w, r, next))| ((s, a), w, r, next));
        Ok(Self::assemble(fm, target, gamma, groups, starts))
    }

    /// Population version: pairs weighted by `data_dist` (flattened `[s][a]`), next
    /// states from the MDP dynamics and start states from its initial distribution.
    pub fn from_population(
        mdp: &TabularMdp,
        data_dist: &[f64],
        target: &TabularPolicy,
        fm: &FeatureMap,
    ) -> Result<Self> {
        check_policy(fm, target)?;
        if data_dist.len() != mdp.num_state_actions() {
            return Err(Error::DimensionMismatch { expected: mdp.num_state_actions(), got: data_dist.len() });
        }
        let mut groups = Vec::new();
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let w = data_dist[mdp.sa_index(s, a)];
                if w > 0.0 {
                    let next = mdp.successors(s, a).iter().map(|&(sp, p)| (sp, w * p)).collect();
                    groups.push(((s, a), w, w * mdp.reward_mean(s, a), next));
                }
            }
        }
        let starts = mdp.initial_dist().iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect();
        Ok(Self::assemble(fm, target, mdp.gamma(), groups.into_iter(), starts))
    }

    fn assemble(
        fm: &FeatureMap,
        target: &TabularPolicy,
        gamma: f64,
        groups: impl Iterator<Item = ((usize, usize), f64, f64, BTreeMap<usize, f64>)>,
        starts: BTreeMap<usize, f64>,
    ) -> Self {
        let dim = fm.dim();
        let mut next = NextFeatures::new(fm, target);
        let mut acc = Accumulator::new(dim);
        let groups = groups
            .map(|((s, a), weight, reward, next_mass)| {
                let features = fm.features(s, a);
                for (sp, mass) in next_mass {
                    acc.add_scaled(next.get(sp), gamma * mass);
                }
                acc.add_scaled(&features, -weight);
                PairGroup { state: s, action: a, features, weight, flow: acc.drain(), reward }
            })
            .collect();
        let mut initial_term = vec![0.0; dim];
        for (s0, mass) in starts {
            for &(i, x) in next.get(s0) {
                initial_term[i] += (1.0 - gamma) * mass * x;
            }
        }
        Self { dim, groups, initial_term }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[PairGroup] {
        &self.groups
    }

    pub fn initial_term(&self) -> &[f64] {
        &self.initial_term
    }

    /// Ratios of every group at pre-activation weights `w`.
    pub fn ratios(&self, w: &[f64]) -> Vec<f64> {
        self.groups.iter().map(|g| softplus(sparse_dot(&g.features, w))).collect()
    }

    /// Residual embedding `e(zeta)` for per-group ratios.
    pub fn residual(&self, zetas: &[f64]) -> Vec<f64> {
        let mut e = self.initial_term.clone();
        for (g, &z) in self.groups.iter().zip(zetas) {
            for &(i, x) in &g.flow {
                e[i] += z * x;
            }
        }
        e
    }

    /// `E_D[zeta]`.
    pub fn normalization(&self, zetas: &[f64]) -> f64 {
        self.groups.iter().zip(zetas).map(|(g, z)| g.weight * z).sum()
    }

    /// `E_D[zeta r]`.
    pub fn value(&self, zetas: &[f64]) -> f64 {
        self.groups.iter().zip(zetas).map(|(g, z)| g.reward * z).sum()
    }
}

/// Residual embedding computed tuple by tuple from per-tuple ratios.
pub fn residual_embedding(
    zeta: &[f64],
    batch: &[Transition],
    target: &TabularPolicy,
    fm: &FeatureMap,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if zeta.len() != batch.len() {
        return Err(Error::DimensionMismatch { expected: batch.len(), got: zeta.len() });
    }
    check_policy(fm, target)?;
    let inv = 1.0 / batch.len() as f64;
    let mut e = vec![0.0; fm.dim()];
    for (t, &z) in batch.iter().zip(zeta) {
        for (i, x) in fm.policy_features(t.next_state, target) {
            e[i] += inv * z * gamma * x;
        }
        for (i, x) in fm.features(t.state, t.action) {
            e[i] -= inv * z * x;
        }
        for (i, x) in fm.policy_features(t.init_state, target) {
            e[i] += inv * (1.0 - gamma) * x;
        }
    }
    Ok(e)
}

/// Closed-form `KL(N(mu, sigma^2) || N(prior_mu, prior_sigma^2))` summed over coordinates.
pub fn gaussian_kl(mu: &[f64], log_sigma: &[f64], prior_mu: f64, prior_sigma: f64) -> f64 {
    let pv = prior_sigma * prior_sigma;
    mu.iter()
        .zip(log_sigma)
        .map(|(&m, &ls)| prior_sigma.ln() - ls + ((2.0 * ls).exp() + (m - prior_mu).powi(2)) / (2.0 * pv) - 0.5)
        .sum()
}

/// Loss value, its parts and the gradient with respect to `(mu, log_sigma)`.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub kl: f64,
    /// `k E_q[|e|^2 / 2]` (with the effective weight).
    pub constraint: f64,
    /// `k_n E_q[(E_D[zeta] - 1)^2]` (with the effective weight).
    pub normalization: f64,
    pub grad_mu: Vec<f64>,
    pub grad_log_sigma: Vec<f64>,
}

/// The variational objective for one batch with fixed weights.
#[derive(Debug, Clone)]
pub struct ChanceObjective {
    pub constraint_weight: f64,
    pub norm_weight: f64,
    pub prior_mu: f64,
    pub prior_sigma: f64,
}

impl ChanceObjective {
    /// Effective weights for a dataset of `n` tuples.
    pub fn new(cfg: &BayesDiceConfig, n: usize) -> Self {
        let scale = match cfg.weight_scaling {
            WeightScaling::Fixed => 1.0,
            WeightScaling::PerSample => n as f64,
        };
        Self {
            constraint_weight: cfg.constraint_weight * scale,
            norm_weight: cfg.norm_weight * scale,
            prior_mu: cfg.prior_mu,
            prior_sigma: cfg.prior_sigma,
        }
    }

    /// Evaluates the loss with the given standard-normal noise draws (one vector of
    /// length `dim` per Monte Carlo sample).
    pub fn evaluate(&self, posterior: &RatioPosterior, stats: &FlowStatistics, noise: &[Vec<f64>]) -> LossEval {
        let m = posterior.dim();
        let sigma: Vec<f64> = posterior.sigma().collect();
        let pv = self.prior_sigma * self.prior_sigma;
        let kl = gaussian_kl(&posterior.mu, &posterior.log_sigma, self.prior_mu, self.prior_sigma);
        let mut grad_mu: Vec<f64> = posterior.mu.iter().map(|&mu| (mu - self.prior_mu) / pv).collect();
        let mut grad_log_sigma: Vec<f64> = sigma.iter().map(|&s| s * s / pv - 1.0).collect();

        let draws = noise.len().max(1) as f64;
        let (mut constraint, mut normalization) = (0.0, 0.0);
        let mut w = vec![0.0; m];
        let mut dw = vec![0.0; m];
        let mut slopes = Vec::with_capacity(stats.groups.len());
        let mut zetas = Vec::with_capacity(stats.groups.len());
        for xi in noise {
            for i in 0..m {
                w[i] = posterior.mu[i] + sigma[i] * xi[i];
            }
            zetas.clear();
            slopes.clear();
            for g in &stats.groups {
                let z = sparse_dot(&g.features, &w);
                zetas.push(softplus(z));
                slopes.push(sigmoid(z));
            }
            let e = stats.residual(&zetas);
            let norm_gap = stats.normalization(&zetas) - 1.0;
            constraint += 0.5 * self.constraint_weight * e.iter().map(|x| x * x).sum::<f64>();
            normalization += self.norm_weight * norm_gap * norm_gap;

            dw.iter_mut().for_each(|x| *x = 0.0);
            for (k, g) in stats.groups.iter().enumerate() {
                let d_zeta =
                    self.constraint_weight * sparse_dot(&g.flow, &e) + 2.0 * self.norm_weight * norm_gap * g.weight;
                let d_pre = d_zeta * slopes[k];
                if d_pre != 0.0 {
                    for &(i, x) in &g.features {
                        dw[i] += d_pre * x;
                    }
                }
            }
            for i in 0..m {
                grad_mu[i] += dw[i] / draws;
                grad_log_sigma[i] += dw[i] * xi[i] * sigma[i] / draws;
            }
        }
        constraint /= draws;
        normalization /= draws;
        LossEval { loss: kl + constraint + normalization, kl, constraint, normalization, grad_mu, grad_log_sigma }
    }
}
