use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{sparse_dot, FeatureMap};
use crate::{Error, Result};

/// `ln(1 + e^x)`, stable for large `|x|` and exactly 0 at `-inf`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on `(0, inf)`; maps 0 to `-inf`.
pub fn softplus_inv(y: f64) -> f64 {
    if y <= 0.0 {
        f64::NEG_INFINITY
    } else if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Softplus,
}

/// Mean-field Gaussian over pre-activation weights `w`, with
/// `zeta(s, a) = softplus(phi(s, a) . w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPosterior {
    pub feature_map: FeatureMap,
    /// Variational mean; `-inf` (serialised as `null`) pins a ratio at zero.
    #[serde(with = "neg_inf_as_null")]
    pub mu: Vec<f64>,
    /// Per-coordinate log standard deviation; `-inf` encodes a point mass.
    #[serde(with = "neg_inf_as_null")]
    pub log_sigma: Vec<f64>,
    #[serde(default)]
    pub link: Link,
}

impl RatioPosterior {
    pub fn new(feature_map: FeatureMap, mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        let m = feature_map.dim();
        for v in [&mu, &log_sigma] {
            if v.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: v.len() });
            }
        }
        if mu.iter().any(|x| x.is_nan()) || log_sigma.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::InvalidArgument("posterior parameters must not be NaN or +inf".into()));
        }
        Ok(Self { feature_map, mu, log_sigma, link: Link::Softplus })
    }

    /// The prior `N(prior_mu, prior_sigma^2)` on every coordinate.
    pub fn from_prior(feature_map: FeatureMap, prior_mu: f64, prior_sigma: f64) -> Self {
        let m = feature_map.dim();
        Self { feature_map, mu: vec![prior_mu; m], log_sigma: vec![prior_sigma.ln(); m], link: Link::Softplus }
    }

    /// Zero-variance posterior at weights `mu`.
    pub fn point_mass(feature_map: FeatureMap, mu: Vec<f64>) -> Result<Self> {
        let m = mu.len();
        Self::new(feature_map, mu, vec![f64::NEG_INFINITY; m])
    }

    /// One-hot point mass with `zeta(s, a) = ratios[s * |A| + a]`.
    pub fn point_mass_ratios(feature_map: FeatureMap, ratios: &[f64]) -> Result<Self> {
        if !matches!(feature_map, FeatureMap::OneHot { .. }) {
            return Err(Error::InvalidArgument("explicit ratios need a one-hot feature map".into()));
        }
        if ratios.iter().any(|&r| r < 0.0 || !r.is_finite()) {
            return Err(Error::InvalidArgument("ratios must be finite and nonnegative".into()));
        }
        Self::point_mass(feature_map, ratios.iter().map(|&r| softplus_inv(r)).collect())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_sigma.iter().map(|l| l.exp())
    }

    pub fn mean_sigma(&self) -> f64 {
        self.sigma().sum::<f64>() / self.dim() as f64
    }

    /// Reparametrised draw `mu + sigma * xi`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.log_sigma)
            .map(|(&m, &ls)| {
                let xi: f64 = StandardNormal.sample(rng);
                m + ls.exp() * xi
            })
            .collect()
    }

    pub fn ratio(&self, weights: &[f64], state: usize, action: usize) -> f64 {
        softplus(sparse_dot(&self.feature_map.features(state, action), weights))
    }

    /// Ratio at the posterior mean weights.
    pub fn ratio_at_mean(&self, state: usize, action: usize) -> f64 {
        self.ratio(&self.mu, state, action)
    }

    /// Monte Carlo estimate of `E_q[zeta(s, a)]` for every pair, flattened `[s][a]`.
    pub fn mean_ratios<R: Rng + ?Sized>(&self, draws: usize, rng: &mut R) -> Vec<f64> {
        let (ns, na) = (self.feature_map.num_states(), self.feature_map.num_actions());
        let mut acc = vec![0.0; ns * na];
        for _ in 0..draws {
            let w = self.sample_weights(rng);
            for s in 0..ns {
                for a in 0..na {
                    acc[s * na + a] += self.ratio(&w, s, a);
                }
            }
        }
        acc.iter().map(|x| x / draws as f64).collect()
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| if x == f64::NEG_INFINITY { None } else { Some(x) }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}
