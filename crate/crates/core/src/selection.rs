//! Ranking scores and posterior-simulation policy selection.
//!
//! Policies are indexed from 0. A [`Ranking`] lists policy indices best-first. Ties in
//! groundtruth values are broken towards the lower index everywhere.

use itertools::Itertools;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayesdice::ValueSampleMatrix;
use crate::data::TupleDataset;
use crate::mdp::TabularPolicy;
use crate::{seed, stats, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ranking {
    pub order: Vec<usize>,
}

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || seen[i] {
                return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn top(&self) -> usize {
        self.order[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingScoreKind {
    PrecisionAtK,
    AccuracyAtK,
    CorrelationAtK,
    RegretAtK,
}

impl RankingScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::PrecisionAtK => "precision_at_k",
            Self::AccuracyAtK => "accuracy_at_k",
            Self::CorrelationAtK => "correlation_at_k",
            Self::RegretAtK => "regret_at_k",
        }
    }
}

impl std::str::FromStr for RankingScoreKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Self::PrecisionAtK, Self::AccuracyAtK, Self::CorrelationAtK, Self::RegretAtK]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ranking score {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankingScoreSpec {
    pub kind: RankingScoreKind,
    pub k: usize,
}

impl RankingScoreSpec {
    pub fn new(kind: RankingScoreKind, k: usize) -> Self {
        Self { kind, k }
    }

    pub fn orientation(&self) -> Orientation {
        match self.kind {
            RankingScoreKind::RegretAtK => Orientation::Minimize,
            _ => Orientation::Maximize,
        }
    }

    /// Whether the score only depends on which policies occupy the top `k` positions.
    pub fn is_set_based(&self) -> bool {
        matches!(self.kind, RankingScoreKind::PrecisionAtK | RankingScoreKind::RegretAtK)
    }

    fn better(&self, candidate: f64, incumbent: f64) -> bool {
        match self.orientation() {
            Orientation::Maximize => candidate > incumbent,
            Orientation::Minimize => candidate < incumbent,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::InvalidArgument(format!("k = {} outside [1, {n}]", self.k)));
        }
        Ok(())
    }
}

/// Descending order of `values`, ties to the lower index.
pub fn argsort_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Groundtruth values with their sorted order and ranks precomputed.
struct Truth {
    values: Vec<f64>,
    sorted: Vec<usize>,
    rank: Vec<usize>,
    best: f64,
}

impl Truth {
    fn new(values: Vec<f64>) -> Self {
        let sorted = argsort_descending(&values);
        let mut rank = vec![0; values.len()];
        for (r, &i) in sorted.iter().enumerate() {
            rank[i] = r;
        }
        let best = values[sorted[0]];
        Self { values, sorted, rank, best }
    }
}

fn score_against(order: &[usize], truth: &Truth, spec: &RankingScoreSpec) -> f64 {
    let k = spec.k;
    let top = &order[..k];
    match spec.kind {
        RankingScoreKind::PrecisionAtK => top.iter().filter(|&&i| truth.rank[i] < k).count() as f64 / k as f64,
        RankingScoreKind::AccuracyAtK => {
            top.iter().zip(&truth.sorted).filter(|(a, b)| a == b).count() as f64 / k as f64
        }
        RankingScoreKind::CorrelationAtK => {
            if k == 1 {
                return if truth.rank[top[0]] == 0 { 1.0 } else { 0.0 };
            }
            let ys: Vec<f64> = top.iter().map(|&i| truth.rank[i] as f64).collect();
            let xs: Vec<f64> = (0..k).map(|j| j as f64).collect();
            pearson(&xs, &ys)
        }
        RankingScoreKind::RegretAtK => {
            truth.best - top.iter().map(|&i| truth.values[i]).fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (stats::mean(xs), stats::mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Scores `order` against groundtruth policy values.
///
/// - precision@k: share of the true top-k found in the first k positions;
/// - accuracy@k: share of the first k positions holding the policy of that true rank;
/// - correlation@k: Pearson correlation between positions `1..k` and the true ranks of
///   the policies placed there (for `k = 1`: 1 if the true best is first, else 0);
/// - regret@k: best true value minus the best true value among the first k positions.
pub fn score_ranking(order: &Ranking, truth_means: &[f64], spec: &RankingScoreSpec) -> Result<f64> {
    if order.len() != truth_means.len() {
        return Err(Error::DimensionMismatch { expected: truth_means.len(), got: order.len() });
    }
    if truth_means.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("truth values must be finite".into()));
    }
    spec.check(truth_means.len())?;
    Ok(score_against(&order.order, &Truth::new(truth_means.to_vec()), spec))
}

fn truths(samples: &ValueSampleMatrix) -> Vec<Truth> {
    (0..samples.num_draws()).map(|j| Truth::new(samples.draw(j))).collect()
}

fn mc_average(order: &[usize], truths: &[Truth], spec: &RankingScoreSpec) -> f64 {
    truths.iter().map(|t| score_against(order, t, spec)).sum::<f64>() / truths.len() as f64
}

/// Monte Carlo average of the score of `order` over the draws of `samples`.
pub fn expected_score(order: &Ranking, samples: &ValueSampleMatrix, spec: &RankingScoreSpec) -> Result<f64> {
    if order.len() != samples.num_policies() {
        return Err(Error::DimensionMismatch { expected: samples.num_policies(), got: order.len() });
    }
    spec.check(samples.num_policies())?;
    Ok(mc_average(&order.order, &truths(samples), spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// All `N!` permutations in lexicographic order.
    Exhaustive,
    /// All `C(N, k)` top-k sets; only for precision@k and regret@k.
    SetEnumeration,
    /// Local search from the mean ranking: move single policies to their best position
    /// until no move strictly improves the expected score.
    GreedyInsertion,
}

/// Largest policy count for exhaustive enumeration.
pub const MAX_EXHAUSTIVE: usize = 8;

impl SelectMode {
    /// Set enumeration when it applies, exhaustive when affordable, greedy otherwise.
    pub fn auto(spec: &RankingScoreSpec, num_policies: usize) -> Self {
        if spec.is_set_based() {
            Self::SetEnumeration
        } else if num_policies <= MAX_EXHAUSTIVE {
            Self::Exhaustive
        } else {
            Self::GreedyInsertion
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ranking: Ranking,
    pub expected_score: f64,
}

fn best_of(candidates: Vec<Vec<usize>>, truths: &[Truth], spec: &RankingScoreSpec) -> Selection {
    let scores: Vec<f64> = candidates.par_iter().map(|c| mc_average(c, truths, spec)).collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if spec.better(s, scores[best]) {
            best = i;
        }
    }
    let order = candidates.into_iter().nth(best).expect("at least one candidate");
    Selection { ranking: Ranking { order }, expected_score: scores[best] }
}

/// Picks the ranking with the best Monte Carlo expected score over the posterior draws.
///
/// Every candidate is scored on the same draws. Among equally good candidates the
/// lexicographically smallest permutation wins (exhaustive and set modes).
pub fn offline_select(samples: &ValueSampleMatrix, spec: &RankingScoreSpec, mode: SelectMode) -> Result<Selection> {
    let n = samples.num_policies();
    spec.check(n)?;
    let truths = truths(samples);
    match mode {
        SelectMode::Exhaustive => {
            if n > MAX_EXHAUSTIVE {
                return Err(Error::TooManyPolicies(n, MAX_EXHAUSTIVE));
            }
            Ok(best_of((0..n).permutations(n).collect(), &truths, spec))
        }
        SelectMode::SetEnumeration => {
            if !spec.is_set_based() {
                return Err(Error::NotSetBased(spec.kind.name()));
            }
            let candidates = (0..n)
                .combinations(spec.k)
                .map(|top| {
                    let rest = (0..n).filter(|i| !top.contains(i));
                    top.iter().copied().chain(rest).collect()
                })
                .collect();
            Ok(best_of(candidates, &truths, spec))
        }
        SelectMode::GreedyInsertion => {
            let mut order = point_estimate_ranking(samples, PointStatistic::Mean).order;
            let mut score = mc_average(&order, &truths, spec);
            for _ in 0..100 * n {
                let mut improved = false;
                for p in 0..n {
                    let from = order.iter().position(|&x| x == p).expect("policy present");
                    let mut rest = order.clone();
                    rest.remove(from);
                    for to in 0..n {
                        if to == from {
                            continue;
                        }
                        let mut cand = rest.clone();
                        cand.insert(to, p);
                        let s = mc_average(&cand, &truths, spec);
                        if spec.better(s, score) {
                            order = cand;
                            score = s;
                            improved = true;
                            break;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            Ok(Selection { ranking: Ranking { order }, expected_score: score })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatistic {
    Mean,
    MeanPlusStd,
    MeanMinusStd,
    Quantile(f64),
}

/// Ranks policies by descending per-policy statistic of their samples.
pub fn point_estimate_ranking(samples: &ValueSampleMatrix, statistic: PointStatistic) -> Ranking {
    let stat: Vec<f64> = samples
        .samples
        .iter()
        .map(|row| match statistic {
            PointStatistic::Mean => stats::mean(row),
            PointStatistic::MeanPlusStd => stats::mean(row) + stats::sample_std(row),
            PointStatistic::MeanMinusStd => stats::mean(row) - stats::sample_std(row),
            PointStatistic::Quantile(q) => stats::quantile_sorted(&stats::sorted_copy(row), q),
        })
        .collect();
    Ranking { order: argsort_descending(&stat) }
}

/// Exact Bayesian reference for the two-armed Bernoulli bandit: Beta posteriors over
/// both arm means, and for each draw `rho_i = sum_a pi_i(a) p_a` for every target.
/// Draws are shared across policies.
pub fn bandit_conjugate_oracle(
    ds: &TupleDataset,
    targets: &[TabularPolicy],
    prior_a: f64,
    prior_b: f64,
    num_draws: usize,
    seed: u64,
) -> Result<ValueSampleMatrix> {
    if ds.meta.env != "bandit" || ds.meta.num_states != 1 || ds.meta.num_actions != 2 {
        return Err(Error::InvalidArgument(format!("conjugate oracle needs bandit data, got env {:?}", ds.meta.env)));
    }
    if !(prior_a > 0.0 && prior_b > 0.0) {
        return Err(Error::InvalidArgument("Beta prior parameters must be positive".into()));
    }
    if targets.is_empty() || num_draws == 0 {
        return Err(Error::Empty("targets or draws"));
    }
    let mut successes = [0.0; 2];
    let mut failures = [0.0; 2];
    for t in &ds.tuples {
        successes[t.action] += t.reward;
        failures[t.action] += 1.0 - t.reward;
    }
    let arms: Vec<Beta<f64>> = (0..2)
        .map(|a| Beta::new(prior_a + successes[a], prior_b + failures[a]))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut rows = vec![Vec::with_capacity(num_draws); targets.len()];
    for _ in 0..num_draws {
        let p = [arms[0].sample(&mut rng), arms[1].sample(&mut rng)];
        for (row, pi) in rows.iter_mut().zip(targets) {
            row.push(pi.prob(0, 0) * p[0] + pi.prob(0, 1) * p[1]);
        }
    }
    ValueSampleMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn r(order: &[usize]) -> Ranking {
        Ranking::new(order.to_vec()).unwrap()
    }

    fn spec(kind: RankingScoreKind, k: usize) -> RankingScoreSpec {
        RankingScoreSpec::new(kind, k)
    }

    use RankingScoreKind::*;

    #[test]
    fn perfect_ranking() {
        let truth = [3.0, 2.0, 1.0];
        let o = r(&[0, 1, 2]);
        assert_eq!(score_ranking(&o, &truth, &spec(PrecisionAtK, 2)).unwrap(), 1.0);
        assert_eq!(score_ranking(&o, &truth, &spec(AccuracyAtK, 2)).unwrap(), 1.0);
        assert_eq!(score_ranking(&o, &truth, &spec(RegretAtK, 2)).unwrap(), 0.0);
        assert_abs_diff_eq!(score_ranking(&o, &truth, &spec(CorrelationAtK, 3)).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn worst_first_and_direct_regret() {
        let truth = [3.0, 2.0, 1.0];
        assert_eq!(score_ranking(&r(&[2, 1, 0]), &truth, &spec(PrecisionAtK, 1)).unwrap(), 0.0);
        assert_eq!(score_ranking(&r(&[2, 1, 0]), &truth, &spec(RegretAtK, 1)).unwrap(), 2.0);
        assert_eq!(score_ranking(&r(&[1, 0, 2]), &truth, &spec(RegretAtK, 1)).unwrap(), 1.0);
        assert_abs_diff_eq!(
            score_ranking(&r(&[2, 1, 0]), &truth, &spec(CorrelationAtK, 3)).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn score_errors() {
        let truth = [1.0, 2.0];
        assert!(score_ranking(&r(&[0, 1]), &truth, &spec(RegretAtK, 3)).is_err());
        assert!(score_ranking(&r(&[0, 1]), &truth, &spec(RegretAtK, 0)).is_err());
        assert!(score_ranking(&r(&[0]), &truth, &spec(RegretAtK, 1)).is_err());
        assert!(Ranking::new(vec![0, 0]).is_err());
    }

    #[test]
    fn ties_break_to_lower_index() {
        assert_eq!(argsort_descending(&[1.0, 2.0, 2.0, 0.5]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn point_mass_selects_mean_order() {
        let m = ValueSampleMatrix::from_rows(vec![vec![0.9; 4], vec![0.1; 4]]).unwrap();
        let sel = offline_select(&m, &spec(RegretAtK, 1), SelectMode::Exhaustive).unwrap();
        assert_eq!(sel.ranking.order, vec![0, 1]);
        assert_eq!(sel.expected_score, 0.0);
    }

    #[test]
    fn aligned_score_can_disagree_with_mean() {
        // Policy 1 has the higher mean, but policy 0 wins in 90% of the draws.
        let mut p0 = vec![0.5; 10];
        let mut p1 = vec![0.45; 10];
        p1[9] = 2.0;
        p0[9] = 0.5;
        let m = ValueSampleMatrix::from_rows(vec![p0, p1]).unwrap();
        assert_eq!(point_estimate_ranking(&m, PointStatistic::Mean).top(), 1);
        let sel = offline_select(&m, &spec(PrecisionAtK, 1), SelectMode::Exhaustive).unwrap();
        assert_eq!(sel.ranking.top(), 0);
        assert_abs_diff_eq!(sel.expected_score, 0.9, epsilon = 1e-15);
        // Regret@1 weighs the size of the miss and follows the mean.
        let sel = offline_select(&m, &spec(RegretAtK, 1), SelectMode::Exhaustive).unwrap();
        assert_eq!(sel.ranking.top(), 1);
    }

    #[test]
    fn mode_errors() {
        let m = ValueSampleMatrix::from_rows(vec![vec![0.0]; 9]).unwrap();
        assert!(matches!(
            offline_select(&m, &spec(AccuracyAtK, 1), SelectMode::Exhaustive),
            Err(Error::TooManyPolicies(9, 8))
        ));
        assert!(matches!(
            offline_select(&m, &spec(AccuracyAtK, 1), SelectMode::SetEnumeration),
            Err(Error::NotSetBased(_))
        ));
        assert!(offline_select(&m, &spec(AccuracyAtK, 1), SelectMode::GreedyInsertion).is_ok());
        assert_eq!(SelectMode::auto(&spec(RegretAtK, 2), 20), SelectMode::SetEnumeration);
        assert_eq!(SelectMode::auto(&spec(AccuracyAtK, 2), 5), SelectMode::Exhaustive);
        assert_eq!(SelectMode::auto(&spec(AccuracyAtK, 2), 9), SelectMode::GreedyInsertion);
    }

    #[test]
    fn point_statistics() {
        let m = ValueSampleMatrix::from_rows(vec![vec![0.3; 5], vec![0.7; 5], vec![0.5; 5]]).unwrap();
        for stat in [
            PointStatistic::Mean,
            PointStatistic::MeanPlusStd,
            PointStatistic::MeanMinusStd,
            PointStatistic::Quantile(0.05),
        ] {
            assert_eq!(point_estimate_ranking(&m, stat).order, vec![1, 2, 0]);
        }
        // means 0.5 / 0.6, std 0.3 / 0.0
        let a = vec![0.2, 0.8, 0.2, 0.8];
        let sd = stats::sample_std(&a);
        let scale = 0.3 / sd;
        let a: Vec<f64> = a.iter().map(|x| 0.5 + (x - 0.5) * scale).collect();
        let m = ValueSampleMatrix::from_rows(vec![a, vec![0.6; 4]]).unwrap();
        assert_eq!(point_estimate_ranking(&m, PointStatistic::MeanMinusStd).top(), 1);
        assert_eq!(point_estimate_ranking(&m, PointStatistic::MeanPlusStd).top(), 0);
    }

    fn bandit_data(pulls: &[(usize, f64)]) -> TupleDataset {
        use crate::data::{DatasetMeta, Transition};
        TupleDataset {
            meta: DatasetMeta {
                env: "bandit".into(),
                gamma: 0.9,
                seed: 0,
                horizon: 1,
                num_states: 1,
                num_actions: 2,
                behavior: None,
            },
            tuples: pulls
                .iter()
                .map(|&(a, r)| Transition { init_state: 0, state: 0, action: a, reward: r, next_state: 0 })
                .collect(),
        }
    }

    #[test]
    fn conjugate_oracle_update() {
        let arm0 = TabularPolicy::new(vec![vec![1.0, 0.0]]).unwrap();
        let arm1 = TabularPolicy::new(vec![vec![0.0, 1.0]]).unwrap();
        let ds = bandit_data(&vec![(0, 1.0); 1000]);
        let m = bandit_conjugate_oracle(&ds, &[arm0.clone(), arm1.clone()], 1.0, 1.0, 20_000, 3).unwrap();
        let mean0 = stats::mean(&m.samples[0]);
        // Beta(1001, 1) has mean 1001/1002 and sd ~1e-3; 2e4 draws give SE ~7e-6.
        assert_abs_diff_eq!(mean0, 1001.0 / 1002.0, epsilon = 5e-5);
        assert_abs_diff_eq!(stats::mean(&m.samples[1]), 0.5, epsilon = 0.01);

        let empty = bandit_data(&[]);
        let m = bandit_conjugate_oracle(&empty, &[arm0, arm1], 2.0, 2.0, 20_000, 4).unwrap();
        assert_abs_diff_eq!(stats::mean(&m.samples[0]), stats::mean(&m.samples[1]), epsilon = 0.01);
        assert_abs_diff_eq!(stats::sample_std(&m.samples[0]), stats::sample_std(&m.samples[1]), epsilon = 0.01);

        let mut other = bandit_data(&[]);
        other.meta.env = "frozenlake".into();
        assert!(bandit_conjugate_oracle(&other, &[TabularPolicy::uniform(1, 2)], 1.0, 1.0, 10, 0).is_err());
    }
}
