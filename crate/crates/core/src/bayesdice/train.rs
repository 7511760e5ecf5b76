use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::features::FeatureMap;
use super::objective::{ChanceObjective, FlowStatistics};
use super::posterior::RatioPosterior;
use super::BayesDiceConfig;
use crate::data::{Transition, TupleDataset};
use crate::mdp::TabularPolicy;
use crate::{seed, Error, Result};

/// Loss above which training is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// First and second moment decay rates of the adaptive-moment update.
pub const ADAM_BETA1: f64 = 0.99;
pub const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr }
    }

    /// Applies one update; `params` and `grads` are the concatenation `[mu, log_sigma]`.
    fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: impl Iterator<Item = f64>) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

pub(crate) fn standard_normal_draws<R: Rng + ?Sized>(rng: &mut R, draws: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..draws).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

fn resample(tuples: &[Transition], size: usize, rng: &mut impl Rng) -> Vec<Transition> {
    (0..size).map(|_| tuples[rng.random_range(0..tuples.len())]).collect()
}

/// Fits the ratio posterior for `target` on `ds` by stochastic gradient descent on the
/// chance-constrained loss. Deterministic given `cfg.seed`.
pub fn train_posterior(
    ds: &TupleDataset,
    target: &TabularPolicy,
    fm: &FeatureMap,
    cfg: &BayesDiceConfig,
) -> Result<RatioPosterior> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if target.num_states() != ds.meta.num_states || target.num_actions() != ds.meta.num_actions {
        return Err(Error::DimensionMismatch {
            expected: ds.meta.num_states * ds.meta.num_actions,
            got: target.num_states() * target.num_actions(),
        });
    }
    let gamma = ds.meta.gamma;
    let objective = ChanceObjective::new(cfg, ds.len());
    let mut posterior = RatioPosterior::from_prior(fm.clone(), cfg.prior_mu, cfg.prior_sigma);
    let dim = posterior.dim();
    let mut rng = seed::rng(cfg.seed);
    let batch_size = cfg.effective_batch_size(ds.len());
    let full = cfg.full_batch.then(|| FlowStatistics::from_tuples(&ds.tuples, target, fm, gamma)).transpose()?;
    let mut adam = Adam::new(2 * dim, cfg.learning_rate);

    for step in 0..cfg.steps {
        let sampled;
        let stats = match &full {
            Some(s) => s,
            None => {
                sampled = FlowStatistics::from_tuples(&resample(&ds.tuples, batch_size, &mut rng), target, fm, gamma)?;
                &sampled
            }
        };
        let noise = standard_normal_draws(&mut rng, cfg.mc_samples_per_step, dim);
        let eval = objective.evaluate(&posterior, stats, &noise);
        if !eval.loss.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: eval.loss,
                hint: "non-finite loss; check the prior and the learning rate",
            });
        }
        if eval.loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged {
                step,
                loss: eval.loss,
                hint: "lower the learning rate or constraint weights",
            });
        }
        let RatioPosterior { mu, log_sigma, .. } = &mut posterior;
        adam.step(mu.iter_mut().chain(log_sigma.iter_mut()), eval.grad_mu.into_iter().chain(eval.grad_log_sigma));
    }
    Ok(posterior)
}
