use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mdp::TabularPolicy;
use crate::seed;

/// Sparse feature vector as `(coordinate, value)` pairs with distinct coordinates.
pub type SparseVec = Vec<(usize, f64)>;

/// Feature embedding `phi(s, a)` of state-action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    /// Indicator of the pair; `dim = |S||A|`.
    OneHot { num_states: usize, num_actions: usize },
    /// `sqrt(2/m) cos(omega_i . x + b_i)` with `x` the one-hot encoding of the pair and
    /// `omega_i ~ N(0, I / bandwidth^2)`, `b_i ~ U[0, 2 pi)`.
    RandomFourier {
        num_states: usize,
        num_actions: usize,
        dim: usize,
        bandwidth: f64,
        /// Row-major `[dim][num_states * num_actions]`.
        frequencies: Vec<f64>,
        phases: Vec<f64>,
    },
}

impl FeatureMap {
    pub fn one_hot(num_states: usize, num_actions: usize) -> Self {
        FeatureMap::OneHot { num_states, num_actions }
    }

    pub fn random_fourier(num_states: usize, num_actions: usize, dim: usize, bandwidth: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let sa = num_states * num_actions;
        let frequencies = (0..dim * sa)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / bandwidth
            })
            .collect();
        let phases = (0..dim).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        FeatureMap::RandomFourier { num_states, num_actions, dim, bandwidth, frequencies, phases }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHot { num_states, num_actions } => num_states * num_actions,
            FeatureMap::RandomFourier { dim, .. } => *dim,
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            FeatureMap::OneHot { num_states, .. } | FeatureMap::RandomFourier { num_states, .. } => *num_states,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            FeatureMap::OneHot { num_actions, .. } | FeatureMap::RandomFourier { num_actions, .. } => *num_actions,
        }
    }

    pub fn features(&self, state: usize, action: usize) -> SparseVec {
        match self {
            FeatureMap::OneHot { num_actions, .. } => vec![(state * num_actions + action, 1.0)],
            FeatureMap::RandomFourier { num_states, num_actions, dim, frequencies, phases, .. } => {
                let sa = num_states * num_actions;
                let col = state * num_actions + action;
                let scale = (2.0 / *dim as f64).sqrt();
                (0..*dim).map(|i| (i, scale * (frequencies[i * sa + col] + phases[i]).cos())).collect()
            }
        }
    }

    /// `sum_a pi(a | s) phi(s, a)`.
    pub fn policy_features(&self, state: usize, policy: &TabularPolicy) -> SparseVec {
        let mut acc = Accumulator::new(self.dim());
        for (a, &p) in policy.row(state).iter().enumerate() {
            if p != 0.0 {
                acc.add_scaled(&self.features(state, a), p);
            }
        }
        acc.drain()
    }
}

/// Dense scratch buffer for summing sparse vectors.
pub(crate) struct Accumulator {
    values: Vec<f64>,
    marked: Vec<bool>,
    touched: Vec<usize>,
}

impl Accumulator {
    pub(crate) fn new(dim: usize) -> Self {
        Self { values: vec![0.0; dim], marked: vec![false; dim], touched: Vec::new() }
    }

    pub(crate) fn add_scaled(&mut self, v: &[(usize, f64)], scale: f64) {
        for &(i, x) in v {
            if !self.marked[i] {
                self.marked[i] = true;
                self.touched.push(i);
            }
            self.values[i] += scale * x;
        }
    }

    /// Returns the accumulated vector sorted by coordinate and resets the buffer.
    pub(crate) fn drain(&mut self) -> SparseVec {
        self.touched.sort_unstable();
        let out = self.touched.iter().map(|&i| (i, self.values[i])).collect();
        for &i in &self.touched {
            self.values[i] = 0.0;
            self.marked[i] = false;
        }
        self.touched.clear();
        out
    }
}

pub(crate) fn sparse_dot(v: &[(usize, f64)], dense: &[f64]) -> f64 {
    v.iter().map(|&(i, x)| x * dense[i]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_is_indicator() {
        let fm = FeatureMap::one_hot(3, 2);
        assert_eq!(fm.dim(), 6);
        assert_eq!(fm.features(2, 1), vec![(5, 1.0)]);
        let pi = TabularPolicy::new(vec![vec![0.5, 0.5], vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
        assert_eq!(fm.policy_features(1, &pi), vec![(2, 0.25), (3, 0.75)]);
        assert_eq!(fm.policy_features(2, &pi), vec![(4, 1.0)]);
    }

    #[test]
    fn fourier_features_are_bounded() {
        let fm = FeatureMap::random_fourier(4, 3, 32, 0.7, 9);
        let bound = (2.0 / 32.0f64).sqrt();
        for s in 0..4 {
            for a in 0..3 {
                let f = fm.features(s, a);
                assert_eq!(f.len(), 32);
                assert!(f.iter().all(|&(_, x)| x.abs() <= bound + 1e-15));
            }
        }
        assert_eq!(fm, FeatureMap::random_fourier(4, 3, 32, 0.7, 9));
        let json = serde_json::to_string(&fm).unwrap();
        assert_eq!(serde_json::from_str::<FeatureMap>(&json).unwrap(), fm);
    }

    #[test]
    fn accumulator_resets() {
        let mut acc = Accumulator::new(4);
        acc.add_scaled(&[(3, 1.0), (1, 2.0)], 0.5);
        acc.add_scaled(&[(1, 1.0)], 1.0);
        assert_eq!(acc.drain(), vec![(1, 2.0), (3, 0.5)]);
        assert!(acc.drain().is_empty());
    }
}
