//! Finite MDPs, policy families and exact dynamic-programming oracles.
//!
//! Values are normalised: `rho(pi) = (1 - gamma) E[sum_t gamma^t r_t]`, which equals the
//! expected reward under the discounted state-action visitation `d^pi`. For
//! `gamma = 1` the visitation is the stationary distribution of the policy's chain and the
//! value is its long-run average reward.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PROB_TOL: f64 = 1e-9;
/// Maximum per-entry residual accepted from the linear solvers.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// The realised reward equals `reward_mean[s][a]`.
    Deterministic,
    /// The realised reward is a 0/1 draw with mean `reward_mean[s][a]`.
    Bernoulli,
}

/// A finite discounted MDP `<S, A, R, T, mu0, gamma>`.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    env_id: String,
    num_states: usize,
    num_actions: usize,
    /// Flattened `[state][action][next_state]`.
    transition: Vec<f64>,
    /// Flattened `[state][action]`.
    reward_mean: Vec<f64>,
    reward_kind: RewardKind,
    initial_dist: Vec<f64>,
    gamma: f64,
    /// Sparse successor lists per `(state, action)`, used for sampling.
    successors: Vec<Vec<(usize, f64)>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidMdp(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidMdp(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        env_id: impl Into<String>,
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_kind: RewardKind,
        initial_dist: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        let sa = num_states * num_actions;
        if transition.len() != sa * num_states {
            return Err(Error::DimensionMismatch { expected: sa * num_states, got: transition.len() });
        }
        if reward_mean.len() != sa {
            return Err(Error::DimensionMismatch { expected: sa, got: reward_mean.len() });
        }
        if initial_dist.len() != num_states {
            return Err(Error::DimensionMismatch { expected: num_states, got: initial_dist.len() });
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1]")));
        }
        for (i, row) in transition.chunks(num_states).enumerate() {
            check_distribution(row, &format!("transition row ({}, {})", i / num_actions, i % num_actions))?;
        }
        check_distribution(&initial_dist, "initial distribution")?;
        if reward_mean.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("non-finite reward".into()));
        }
        if reward_kind == RewardKind::Bernoulli && reward_mean.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidMdp("Bernoulli reward means must lie in [0, 1]".into()));
        }
        let successors = transition
            .chunks(num_states)
            .map(|row| row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, &p)| (s, p)).collect())
            .collect();
        Ok(Self {
            env_id: env_id.into(),
            num_states,
            num_actions,
            transition,
            reward_mean,
            reward_kind,
            initial_dist,
            gamma,
            successors,
        })
    }

    /// Same MDP with a different discount.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1]")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_state_actions(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.reward_kind
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    #[inline]
    pub fn sa_index(&self, state: usize, action: usize) -> usize {
        state * self.num_actions + action
    }

    pub fn transition_prob(&self, state: usize, action: usize, next_state: usize) -> f64 {
        self.transition[self.sa_index(state, action) * self.num_states + next_state]
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let i = self.sa_index(state, action) * self.num_states;
        &self.transition[i..i + self.num_states]
    }

    pub fn successors(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.successors[self.sa_index(state, action)]
    }

    pub fn reward_mean(&self, state: usize, action: usize) -> f64 {
        self.reward_mean[self.sa_index(state, action)]
    }

    pub fn reward_means(&self) -> &[f64] {
        &self.reward_mean
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(rng, self.initial_dist.iter().copied().enumerate())
    }

    pub fn sample_next_state<R: Rng + ?Sized>(&self, rng: &mut R, state: usize, action: usize) -> usize {
        sample_index(rng, self.successors(state, action).iter().copied())
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, rng: &mut R, state: usize, action: usize) -> f64 {
        let mean = self.reward_mean(state, action);
        match self.reward_kind {
            RewardKind::Deterministic => mean,
            RewardKind::Bernoulli => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Inverse-CDF draw from `(index, probability)` pairs.
fn sample_index<R: Rng + ?Sized>(rng: &mut R, weights: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in weights {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// A stochastic policy `pi(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    probs: Vec<Vec<f64>>,
}

impl TryFrom<PolicyRepr> for TabularPolicy {
    type Error = Error;
    fn try_from(r: PolicyRepr) -> Result<Self> {
        TabularPolicy::new(r.probs)
    }
}

impl From<TabularPolicy> for PolicyRepr {
    fn from(p: TabularPolicy) -> Self {
        PolicyRepr { probs: p.probs.chunks(p.num_actions).map(<[f64]>::to_vec).collect() }
    }
}

impl TabularPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidPolicy("empty probability table".into()));
        }
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for (s, row) in rows.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::InvalidPolicy(format!("row {s} has {} actions, expected {num_actions}", row.len())));
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
            probs.extend(row);
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, probs: vec![1.0 / num_actions as f64; num_states * num_actions] }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let rows = actions
            .iter()
            .map(|&a| {
                if a >= num_actions {
                    return Err(Error::InvalidPolicy(format!("action {a} out of range")));
                }
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R, state: usize) -> usize {
        sample_index(rng, self.row(state).iter().copied().enumerate())
    }

    pub fn check_dims(&self, mdp: &TabularMdp) -> Result<()> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(Error::InvalidPolicy(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.num_states,
                self.num_actions,
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    /// Two-armed bandit policy playing arm 0 with probability alpha.
    BanditAlpha,
    /// Mixture `(1 - eps) * base + eps * uniform`.
    EpsilonGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFamilySpec {
    pub family: PolicyFamily,
    pub alpha_or_epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_policy: Option<TabularPolicy>,
}

impl PolicyFamilySpec {
    pub fn bandit_alpha(alpha: f64) -> Self {
        Self { family: PolicyFamily::BanditAlpha, alpha_or_epsilon: alpha, base_policy: None }
    }

    pub fn epsilon_greedy(epsilon: f64, base: TabularPolicy) -> Self {
        Self { family: PolicyFamily::EpsilonGreedy, alpha_or_epsilon: epsilon, base_policy: Some(base) }
    }
}

pub fn make_policy(mdp: &TabularMdp, spec: &PolicyFamilySpec) -> Result<TabularPolicy> {
    let x = spec.alpha_or_epsilon;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidPolicy(format!("alpha/epsilon {x} outside [0, 1]")));
    }
    match spec.family {
        PolicyFamily::BanditAlpha => {
            if mdp.num_actions() != 2 {
                return Err(Error::InvalidPolicy("bandit_alpha needs exactly two actions".into()));
            }
            TabularPolicy::new(vec![vec![x, 1.0 - x]; mdp.num_states()])
        }
        PolicyFamily::EpsilonGreedy => {
            let base = spec
                .base_policy
                .as_ref()
                .ok_or_else(|| Error::InvalidPolicy("epsilon_greedy requires a base policy".into()))?;
            base.check_dims(mdp)?;
            let uniform = x / mdp.num_actions() as f64;
            let rows =
                (0..mdp.num_states()).map(|s| base.row(s).iter().map(|&p| (1.0 - x) * p + uniform).collect()).collect();
            TabularPolicy::new(rows)
        }
    }
}

/// Discount used when an environment builder is not given one.
pub const DEFAULT_BANDIT_GAMMA: f64 = 0.9;
pub const DEFAULT_GRIDWORLD_GAMMA: f64 = 0.99;

/// Single-state two-armed Bernoulli bandit; arm 0 is the optimal arm.
pub fn build_bandit(p_opt: f64, p_sub: f64) -> Result<TabularMdp> {
    for p in [p_opt, p_sub] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidMdp(format!("arm mean {p} outside [0, 1]")));
        }
    }
    if p_opt < p_sub {
        return Err(Error::InvalidMdp(format!("optimal arm mean {p_opt} is below the sub-optimal arm mean {p_sub}")));
    }
    TabularMdp::new(
        "bandit",
        1,
        2,
        vec![1.0, 1.0],
        vec![p_opt, p_sub],
        RewardKind::Bernoulli,
        vec![1.0],
        DEFAULT_BANDIT_GAMMA,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridworldKind {
    #[serde(alias = "frozenlake")]
    Frozenlake4x4,
    #[serde(alias = "taxi")]
    Taxi5x5,
}

impl std::str::FromStr for GridworldKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozenlake" | "frozenlake4x4" => Ok(Self::Frozenlake4x4),
            "taxi" | "taxi5x5" => Ok(Self::Taxi5x5),
            other => Err(Error::InvalidArgument(format!("unknown gridworld kind {other:?}"))),
        }
    }
}

/// Builds FrozenLake 4x4 or Taxi 5x5 as infinite-horizon MDPs.
///
/// With probability `slip_prob` a move is replaced by one of the two perpendicular
/// moves, chosen uniformly. Terminal events (falling into a hole, reaching the goal,
/// completing a Taxi drop-off) send the agent back through the initial distribution.
pub fn build_gridworld(kind: GridworldKind, slip_prob: f64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&slip_prob) {
        return Err(Error::InvalidMdp(format!("slip probability {slip_prob} outside [0, 1]")));
    }
    match kind {
        GridworldKind::Frozenlake4x4 => frozenlake(slip_prob),
        GridworldKind::Taxi5x5 => taxi(slip_prob),
    }
}

const FROZENLAKE_MAP: [&[u8; 4]; 4] = [b"SFFF", b"FHFH", b"FFFH", b"HFFG"];

// FrozenLake action order: left, down, right, up.
fn frozenlake_move(row: usize, col: usize, dir: usize) -> (usize, usize) {
    match dir {
        0 => (row, col.saturating_sub(1)),
        1 => ((row + 1).min(3), col),
        2 => (row, (col + 1).min(3)),
        _ => (row.saturating_sub(1), col),
    }
}

fn frozenlake(slip: f64) -> Result<TabularMdp> {
    let (ns, na) = (16, 4);
    let mut initial = vec![0.0; ns];
    initial[0] = 1.0;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        let (row, col) = (s / 4, s % 4);
        let cell = FROZENLAKE_MAP[row][col];
        for a in 0..na {
            let base = (s * na + a) * ns;
            if cell == b'H' || cell == b'G' {
                transition[base..base + ns].copy_from_slice(&initial);
                if cell == b'G' {
                    reward[s * na + a] = 1.0;
                }
                continue;
            }
            for (dir, p) in [(a, 1.0 - slip), ((a + 3) % 4, slip / 2.0), ((a + 1) % 4, slip / 2.0)] {
                let (r, c) = frozenlake_move(row, col, dir);
                transition[base + r * 4 + c] += p;
            }
        }
    }
    TabularMdp::new(
        "frozenlake",
        ns,
        na,
        transition,
        reward,
        RewardKind::Deterministic,
        initial,
        DEFAULT_GRIDWORLD_GAMMA,
    )
}

const TAXI_MAP: [&[u8; 11]; 5] = [b"|R: | : :G|", b"| : | : : |", b"| : : : : |", b"| | : | : |", b"|Y| : |B: |"];
const TAXI_LOCS: [(usize, usize); 4] = [(0, 0), (0, 4), (4, 0), (4, 3)];

pub fn taxi_encode(row: usize, col: usize, passenger: usize, dest: usize) -> usize {
    ((row * 5 + col) * 5 + passenger) * 4 + dest
}

pub fn taxi_decode(s: usize) -> (usize, usize, usize, usize) {
    let dest = s % 4;
    let passenger = (s / 4) % 5;
    let col = (s / 20) % 5;
    let row = s / 100;
    (row, col, passenger, dest)
}

// Taxi navigation order: south, north, east, west.
fn taxi_move(row: usize, col: usize, dir: usize) -> (usize, usize) {
    match dir {
        0 => ((row + 1).min(4), col),
        1 => (row.saturating_sub(1), col),
        2 if TAXI_MAP[row][2 * col + 2] == b':' => (row, col + 1),
        3 if TAXI_MAP[row][2 * col] == b':' => (row, col - 1),
        _ => (row, col),
    }
}

fn taxi_perpendicular(dir: usize) -> [usize; 2] {
    if dir < 2 {
        [2, 3]
    } else {
        [0, 1]
    }
}

fn taxi(slip: f64) -> Result<TabularMdp> {
    let (ns, na) = (500, 6);
    // Raw rewards -1 (step), +20 (delivery), -10 (illegal pickup/drop-off), mapped into [0, 1].
    let scale = |r: f64| (r + 10.0) / 30.0;
    let mut initial = vec![0.0; ns];
    for row in 0..5 {
        for col in 0..5 {
            for p in 0..4 {
                for d in (0..4).filter(|&d| d != p) {
                    initial[taxi_encode(row, col, p, d)] = 1.0 / 300.0;
                }
            }
        }
    }
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        let (row, col, pass, dest) = taxi_decode(s);
        for a in 0..na {
            let base = (s * na + a) * ns;
            let idx = s * na + a;
            if a < 4 {
                let [p1, p2] = taxi_perpendicular(a);
                for (dir, p) in [(a, 1.0 - slip), (p1, slip / 2.0), (p2, slip / 2.0)] {
                    let (r, c) = taxi_move(row, col, dir);
                    transition[base + taxi_encode(r, c, pass, dest)] += p;
                }
                reward[idx] = scale(-1.0);
                continue;
            }
            let here = TAXI_LOCS.iter().position(|&l| l == (row, col));
            if a == 4 {
                if pass < 4 && here == Some(pass) {
                    transition[base + taxi_encode(row, col, 4, dest)] = 1.0;
                    reward[idx] = scale(-1.0);
                } else {
                    transition[base + s] = 1.0;
                    reward[idx] = scale(-10.0);
                }
            } else if pass == 4 && here == Some(dest) {
                transition[base..base + ns].copy_from_slice(&initial);
                reward[idx] = scale(20.0);
            } else if let (4, Some(loc)) = (pass, here) {
                transition[base + taxi_encode(row, col, loc, dest)] = 1.0;
                reward[idx] = scale(-1.0);
            } else {
                transition[base + s] = 1.0;
                reward[idx] = scale(-10.0);
            }
        }
    }
    TabularMdp::new("taxi", ns, na, transition, reward, RewardKind::Deterministic, initial, DEFAULT_GRIDWORLD_GAMMA)
}

/// State-to-state transition matrix `P_pi[s][s']` under `policy`.
fn state_transition_matrix(mdp: &TabularMdp, policy: &TabularPolicy) -> DMatrix<f64> {
    let n = mdp.num_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for &(sp, t) in mdp.successors(s, a) {
                p[(s, sp)] += pa * t;
            }
        }
    }
    p
}

/// LU solve that rejects (numerically) singular systems.
fn solve_checked(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let u = lu.u();
    let diag_max = u.diagonal().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diag_min = u.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if !(diag_min > 1e-12 * diag_max.max(1.0)) {
        return Err(Error::SingularSystem(format!("{what}: pivot ratio {:e}", diag_min / diag_max)));
    }
    let x = lu.solve(&b).ok_or_else(|| Error::SingularSystem(what.to_string()))?;
    let residual = (&a * &x - &b).amax();
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::SingularSystem(format!("{what}: residual {residual:e}")));
    }
    Ok(x)
}

/// State marginal of the discounted visitation (or the stationary distribution when
/// `gamma = 1`).
fn state_visitation(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<DVector<f64>> {
    policy.check_dims(mdp)?;
    let n = mdp.num_states();
    let gamma = mdp.gamma();
    let pt = state_transition_matrix(mdp, policy).transpose();
    if gamma < 1.0 {
        let a = DMatrix::identity(n, n) - pt * gamma;
        let b = DVector::from_iterator(n, mdp.initial_dist().iter().map(|m| (1.0 - gamma) * m));
        solve_checked(a, b, "discounted visitation")
    } else {
        // (I - P^T) nu = 0 with the last equation replaced by sum(nu) = 1.
        let mut a = DMatrix::identity(n, n) - pt;
        a.row_mut(n - 1).fill(1.0);
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        solve_checked(a, b, "stationary distribution (chain may not be ergodic)")
    }
}

/// Discounted state-action visitation `d^pi`, flattened `[state][action]`.
pub fn exact_visitation(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let nu = state_visitation(mdp, policy)?;
    let mut d = Vec::with_capacity(mdp.num_state_actions());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            d.push(nu[s] * policy.prob(s, a));
        }
    }
    let residual = bellman_flow_residual(mdp, policy, &d);
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::SingularSystem(format!("visitation residual {residual:e}")));
    }
    Ok(d)
}

/// Largest absolute violation of
/// `d(s,a) = (1 - gamma) mu0(s) pi(a|s) + gamma pi(a|s) sum_{s~,a~} T(s | s~, a~) d(s~, a~)`.
pub fn bellman_flow_residual(mdp: &TabularMdp, policy: &TabularPolicy, d: &[f64]) -> f64 {
    let gamma = mdp.gamma();
    let mut inflow = vec![0.0; mdp.num_states()];
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let mass = d[mdp.sa_index(s, a)];
            for &(sp, t) in mdp.successors(s, a) {
                inflow[sp] += t * mass;
            }
        }
    }
    let mut worst = 0.0_f64;
    for s in 0..mdp.num_states() {
        let src = (1.0 - gamma) * mdp.initial_dist()[s] + gamma * inflow[s];
        for a in 0..mdp.num_actions() {
            worst = worst.max((policy.prob(s, a) * src - d[mdp.sa_index(s, a)]).abs());
        }
    }
    worst
}

/// Policy value `<d^pi, r>`.
pub fn exact_policy_value(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let d = exact_visitation(mdp, policy)?;
    Ok(d.iter().zip(mdp.reward_means()).map(|(d, r)| d * r).sum())
}

/// State-action values solving `Q = R + gamma P^pi Q`; requires `gamma < 1`.
pub fn q_values(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.check_dims(mdp)?;
    let gamma = mdp.gamma();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument("Q-values need gamma < 1".into()));
    }
    let n = mdp.num_states();
    let r_pi = DVector::from_iterator(
        n,
        (0..n).map(|s| (0..mdp.num_actions()).map(|a| policy.prob(s, a) * mdp.reward_mean(s, a)).sum()),
    );
    let a = DMatrix::identity(n, n) - state_transition_matrix(mdp, policy) * gamma;
    let v = solve_checked(a, r_pi, "state values")?;
    let mut q = Vec::with_capacity(mdp.num_state_actions());
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let next: f64 = mdp.successors(s, a).iter().map(|&(sp, t)| t * v[sp]).sum();
            q.push(mdp.reward_mean(s, a) + gamma * next);
        }
    }
    Ok(q)
}

/// `(1 - gamma) E_{s0 ~ mu0, a0 ~ pi}[Q^pi(s0, a0)]`.
pub fn primal_policy_value(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    let q = q_values(mdp, policy)?;
    let mut total = 0.0;
    for (s, &m) in mdp.initial_dist().iter().enumerate() {
        for a in 0..mdp.num_actions() {
            total += m * policy.prob(s, a) * q[mdp.sa_index(s, a)];
        }
    }
    Ok((1.0 - mdp.gamma()) * total)
}

/// Greedy policy from value iteration (ties go to the lowest action index).
///
/// For `gamma = 1` the iteration uses a discount of 0.999.
pub fn optimal_policy(mdp: &TabularMdp) -> TabularPolicy {
    let gamma = mdp.gamma().min(0.999);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut v = vec![0.0; ns];
    let backup = |v: &[f64], s: usize, a: usize| {
        mdp.reward_mean(s, a) + gamma * mdp.successors(s, a).iter().map(|&(sp, t)| t * v[sp]).sum::<f64>()
    };
    for _ in 0..100_000 {
        let next: Vec<f64> =
            (0..ns).map(|s| (0..na).map(|a| backup(&v, s, a)).fold(f64::NEG_INFINITY, f64::max)).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-11 {
            break;
        }
    }
    let actions: Vec<usize> = (0..ns)
        .map(|s| {
            let qs: Vec<f64> = (0..na).map(|a| backup(&v, s, a)).collect();
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            qs.iter().position(|&q| q >= best - 1e-12).unwrap_or(0)
        })
        .collect();
    TabularPolicy::deterministic(&actions, na).expect("valid greedy actions")
}
