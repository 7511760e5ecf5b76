//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use bayesdice_core::mdp::{optimal_policy, DEFAULT_BANDIT_GAMMA, DEFAULT_GRIDWORLD_GAMMA};
use bayesdice_core::{
    build_bandit, build_gridworld, make_policy, BayesDiceConfig, FeatureMap, GridworldKind, PolicyFamilySpec,
    RankingScoreSpec, TabularMdp, TabularPolicy,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Coverage,
    Selection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bayesdice,
    WisT,
    WisBernstein,
    WisBootstrap,
    MeanRank,
    LowerBoundRank,
    UpperBoundRank,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bayesdice => "bayesdice",
            Self::WisT => "wis_t",
            Self::WisBernstein => "wis_bernstein",
            Self::WisBootstrap => "wis_bootstrap",
            Self::MeanRank => "mean_rank",
            Self::LowerBoundRank => "lower_bound_rank",
            Self::UpperBoundRank => "upper_bound_rank",
            Self::Oracle => "oracle",
        }
    }

    fn is_interval(self) -> bool {
        matches!(self, Self::Bayesdice | Self::WisT | Self::WisBernstein | Self::WisBootstrap)
    }

    fn is_ranking(self) -> bool {
        matches!(self, Self::Bayesdice | Self::MeanRank | Self::LowerBoundRank | Self::UpperBoundRank | Self::Oracle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Bandit {
        #[serde(default = "default_p_opt")]
        p_opt: f64,
        #[serde(default = "default_p_sub")]
        p_sub: f64,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Frozenlake {
        #[serde(default = "default_frozenlake_slip")]
        slip: f64,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Taxi {
        #[serde(default)]
        slip: f64,
        #[serde(default)]
        gamma: Option<f64>,
    },
}

fn default_p_opt() -> f64 {
    0.7
}

fn default_p_sub() -> f64 {
    0.3
}

fn default_frozenlake_slip() -> f64 {
    1.0 / 3.0
}

impl EnvSpec {
    pub fn build(&self) -> bayesdice_core::Result<TabularMdp> {
        let (mdp, gamma, default_gamma) = match *self {
            Self::Bandit { p_opt, p_sub, gamma } => (build_bandit(p_opt, p_sub)?, gamma, DEFAULT_BANDIT_GAMMA),
            Self::Frozenlake { slip, gamma } => {
                (build_gridworld(GridworldKind::Frozenlake4x4, slip)?, gamma, DEFAULT_GRIDWORLD_GAMMA)
            }
            Self::Taxi { slip, gamma } => {
                (build_gridworld(GridworldKind::Taxi5x5, slip)?, gamma, DEFAULT_GRIDWORLD_GAMMA)
            }
        };
        mdp.with_gamma(gamma.unwrap_or(default_gamma))
    }

    pub fn is_bandit(&self) -> bool {
        matches!(self, Self::Bandit { .. })
    }

    /// Trajectory length used when the config does not set one.
    pub fn default_horizon(&self) -> usize {
        if self.is_bandit() {
            1
        } else {
            100
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasePolicy {
    /// Greedy policy from value iteration.
    #[default]
    Optimal,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    BanditAlpha {
        alpha: f64,
    },
    EpsilonGreedy {
        epsilon: f64,
        #[serde(default)]
        base: BasePolicy,
    },
    Uniform,
    Explicit {
        probs: Vec<Vec<f64>>,
    },
}

impl PolicySpec {
    pub fn build(&self, mdp: &TabularMdp) -> bayesdice_core::Result<TabularPolicy> {
        let policy = match self {
            Self::BanditAlpha { alpha } => make_policy(mdp, &PolicyFamilySpec::bandit_alpha(*alpha))?,
            Self::EpsilonGreedy { epsilon, base } => {
                let base = match base {
                    BasePolicy::Optimal => optimal_policy(mdp),
                    BasePolicy::Uniform => TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()),
                };
                make_policy(mdp, &PolicyFamilySpec::epsilon_greedy(*epsilon, base))?
            }
            Self::Uniform => TabularPolicy::uniform(mdp.num_states(), mdp.num_actions()),
            Self::Explicit { probs } => TabularPolicy::new(probs.clone())?,
        };
        policy.check_dims(mdp)?;
        Ok(policy)
    }

    pub fn label(&self) -> String {
        match self {
            Self::BanditAlpha { alpha } => format!("alpha={alpha}"),
            Self::EpsilonGreedy { epsilon, base: BasePolicy::Optimal } => format!("eps={epsilon}"),
            Self::EpsilonGreedy { epsilon, base: BasePolicy::Uniform } => format!("eps={epsilon}/uniform"),
            Self::Uniform => "uniform".into(),
            Self::Explicit { .. } => "explicit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    #[default]
    OneHot,
    RandomFourier {
        dim: usize,
        bandwidth: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl FeatureSpec {
    pub fn build(&self, mdp: &TabularMdp) -> FeatureMap {
        match *self {
            Self::OneHot => FeatureMap::one_hot(mdp.num_states(), mdp.num_actions()),
            Self::RandomFourier { dim, bandwidth, seed } => {
                FeatureMap::random_fourier(mdp.num_states(), mdp.num_actions(), dim, bandwidth, seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub env: EnvSpec,
    pub behavior: PolicySpec,
    pub targets: Vec<PolicySpec>,
    /// Dataset sizes in tuples; each must be a multiple of the horizon.
    pub dataset_sizes: Vec<usize>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub confidence_levels: Vec<f64>,
    #[serde(default)]
    pub ranking_scores: Vec<RankingScoreSpec>,
    pub methods: Vec<Method>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bayesdice: BayesDiceConfig,
    #[serde(default)]
    pub features: FeatureSpec,
    /// Posterior value draws per policy.
    #[serde(default = "default_num_draws")]
    pub num_draws: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Beta prior of the conjugate bandit reference.
    #[serde(default = "default_oracle_prior")]
    pub oracle_prior: (f64, f64),
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_num_draws() -> usize {
    10_000
}

fn default_resamples() -> usize {
    2000
}

fn default_oracle_prior() -> (f64, f64) {
    (1.0, 1.0)
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problems):", self.0.len())?;
        for p in &self.0 {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Environment and policies built from a validated config.
pub struct Resolved {
    pub mdp: TabularMdp,
    pub behavior: TabularPolicy,
    pub targets: Vec<TabularPolicy>,
    pub target_labels: Vec<String>,
    pub features: FeatureMap,
    pub horizon: usize,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| self.env.default_horizon())
    }

    /// Checks the whole config and builds its environment and policies; all problems
    /// are reported together.
    pub fn resolve(&self) -> Result<Resolved, ConfigErrors> {
        let mut problems = Vec::new();
        if self.methods.is_empty() {
            problems.push("methods must not be empty".to_string());
        }
        if self.targets.is_empty() {
            problems.push("targets must not be empty".to_string());
        }
        if self.trials == 0 {
            problems.push("trials must be at least 1".to_string());
        }
        if self.num_draws < 2 {
            problems.push("num_draws must be at least 2".to_string());
        }
        let horizon = self.horizon();
        if horizon == 0 {
            problems.push("horizon must be positive".to_string());
        }
        if self.dataset_sizes.is_empty() {
            problems.push("dataset_sizes must not be empty".to_string());
        }
        for &n in &self.dataset_sizes {
            if n == 0 || (horizon > 0 && n % horizon != 0) {
                problems.push(format!("dataset size {n} is not a positive multiple of the horizon {horizon}"));
            }
        }
        match self.experiment {
            ExperimentKind::Coverage => {
                if self.confidence_levels.is_empty() {
                    problems.push("coverage needs confidence_levels".to_string());
                }
                for &c in &self.confidence_levels {
                    if !(c > 0.0 && c < 1.0) {
                        problems.push(format!("confidence level {c} outside (0, 1)"));
                    }
                }
                for m in self.methods.iter().filter(|m| !m.is_interval()) {
                    problems.push(format!("method {m} does not produce intervals"));
                }
                if self.methods.contains(&Method::WisBootstrap) && self.bootstrap_resamples == 0 {
                    problems.push("bootstrap_resamples must be positive".to_string());
                }
            }
            ExperimentKind::Selection => {
                if self.targets.len() < 2 {
                    problems.push("selection needs at least two targets".to_string());
                }
                if self.ranking_scores.is_empty() {
                    problems.push("selection needs ranking_scores".to_string());
                }
                for s in &self.ranking_scores {
                    if s.k == 0 || s.k > self.targets.len() {
                        problems.push(format!("{} k = {} outside [1, {}]", s.kind.name(), s.k, self.targets.len()));
                    }
                }
                for m in self.methods.iter().filter(|m| !m.is_ranking()) {
                    problems.push(format!("method {m} does not produce rankings"));
                }
                if self.methods.contains(&Method::Oracle) {
                    if !self.env.is_bandit() {
                        problems.push("the oracle method needs the bandit environment".to_string());
                    }
                    let (a, b) = self.oracle_prior;
                    if !(a > 0.0 && b > 0.0) {
                        problems.push("oracle_prior parameters must be positive".to_string());
                    }
                }
            }
        }
        if let Err(e) = self.bayesdice.validate() {
            problems.push(format!("bayesdice: {e}"));
        }
        if let FeatureSpec::RandomFourier { dim, bandwidth, .. } = self.features {
            if dim == 0 || !(bandwidth > 0.0) {
                problems.push("random_fourier features need dim > 0 and bandwidth > 0".to_string());
            }
        }

        let mdp = match self.env.build() {
            Ok(m) => Some(m),
            Err(e) => {
                problems.push(format!("env: {e}"));
                None
            }
        };
        let mut behavior = None;
        let mut targets = Vec::new();
        if let Some(mdp) = &mdp {
            match self.behavior.build(mdp) {
                Ok(p) => behavior = Some(p),
                Err(e) => problems.push(format!("behavior: {e}")),
            }
            for (i, t) in self.targets.iter().enumerate() {
                match t.build(mdp) {
                    Ok(p) => targets.push(p),
                    Err(e) => problems.push(format!("target {i}: {e}")),
                }
            }
        }
        if !problems.is_empty() {
            return Err(ConfigErrors(problems));
        }
        let mdp = mdp.expect("checked above");
        Ok(Resolved {
            features: self.features.build(&mdp),
            behavior: behavior.expect("checked above"),
            targets,
            target_labels: self.targets.iter().map(PolicySpec::label).collect(),
            horizon,
            mdp,
        })
    }

    /// The two-armed bandit coverage study: behavior alpha 0.5, one target.
    pub fn bandit_coverage(target_alpha: f64, n: usize, trials: usize) -> Self {
        Self {
            experiment: ExperimentKind::Coverage,
            env: EnvSpec::Bandit { p_opt: 0.7, p_sub: 0.3, gamma: None },
            behavior: PolicySpec::BanditAlpha { alpha: 0.5 },
            targets: vec![PolicySpec::BanditAlpha { alpha: target_alpha }],
            dataset_sizes: vec![n],
            horizon: None,
            confidence_levels: vec![0.6, 0.8, 0.9, 0.95],
            ranking_scores: Vec::new(),
            methods: vec![Method::Bayesdice, Method::WisT, Method::WisBernstein, Method::WisBootstrap],
            trials,
            seed: 0,
            bayesdice: BayesDiceConfig::default(),
            features: FeatureSpec::OneHot,
            num_draws: default_num_draws(),
            bootstrap_resamples: default_resamples(),
            oracle_prior: default_oracle_prior(),
            output: None,
        }
    }

    /// The two-armed bandit selection study over `alpha in {0.75, ..., 0.95}`.
    pub fn bandit_selection(n: usize, trials: usize) -> Self {
        Self {
            experiment: ExperimentKind::Selection,
            targets: [0.75, 0.8, 0.85, 0.9, 0.95].iter().map(|&alpha| PolicySpec::BanditAlpha { alpha }).collect(),
            confidence_levels: Vec::new(),
            ranking_scores: vec![RankingScoreSpec::new(bayesdice_core::RankingScoreKind::RegretAtK, 1)],
            methods: vec![
                Method::Bayesdice,
                Method::MeanRank,
                Method::LowerBoundRank,
                Method::UpperBoundRank,
                Method::Oracle,
            ],
            ..Self::bandit_coverage(0.95, n, trials)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_json() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{
                "experiment": "coverage",
                "env": {"kind": "bandit"},
                "behavior": {"family": "bandit_alpha", "alpha": 0.5},
                "targets": [{"family": "bandit_alpha", "alpha": 0.95}],
                "dataset_sizes": [200],
                "confidence_levels": [0.9],
                "methods": ["bayesdice", "wis_t"],
                "trials": 3,
                "bayesdice": {"steps": 100, "full_batch": true}
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.env, EnvSpec::Bandit { p_opt: 0.7, p_sub: 0.3, gamma: None });
        assert_eq!(cfg.bayesdice.steps, 100);
        assert_eq!(cfg.bayesdice.learning_rate, BayesDiceConfig::default().learning_rate);
        assert_eq!(cfg.horizon(), 1);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.target_labels, vec!["alpha=0.95"]);
        assert_eq!(r.mdp.gamma(), DEFAULT_BANDIT_GAMMA);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"{"experiment": "coverage", "env": {"kind": "bandit", "arms": 3}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = ExperimentConfig::bandit_coverage(0.9, 200, 0);
        cfg.methods.push(Method::Oracle);
        cfg.confidence_levels.push(1.5);
        cfg.bayesdice.steps = 0;
        cfg.targets.push(PolicySpec::EpsilonGreedy { epsilon: 2.0, base: BasePolicy::Optimal });
        let errs = cfg.resolve().err().unwrap();
        assert_eq!(errs.0.len(), 5, "{errs}");
        let text = errs.to_string();
        for needle in ["trials", "oracle", "1.5", "steps", "target 1"] {
            assert!(text.contains(needle), "{needle} missing from {text}");
        }
    }

    #[test]
    fn selection_checks() {
        let mut cfg = ExperimentConfig::bandit_selection(200, 2);
        cfg.env = EnvSpec::Frozenlake { slip: 0.0, gamma: None };
        cfg.dataset_sizes = vec![150];
        cfg.ranking_scores.push(RankingScoreSpec::new(bayesdice_core::RankingScoreKind::PrecisionAtK, 9));
        let text = cfg.resolve().err().unwrap().to_string();
        for needle in ["oracle", "horizon", "k = 9", "behavior", "target 0"] {
            assert!(text.contains(needle), "{needle} missing from {text}");
        }
        assert!(ExperimentConfig::bandit_selection(200, 2).resolve().is_ok());
    }

    #[test]
    fn gridworld_policies() {
        let cfg = ExperimentConfig {
            env: EnvSpec::Taxi { slip: 0.1, gamma: Some(0.95) },
            behavior: PolicySpec::Uniform,
            targets: vec![PolicySpec::EpsilonGreedy { epsilon: 0.1, base: BasePolicy::Optimal }],
            dataset_sizes: vec![1000],
            ..ExperimentConfig::bandit_coverage(0.9, 200, 1)
        };
        let r = cfg.resolve().unwrap();
        assert_eq!(r.horizon, 100);
        assert_eq!(r.mdp.num_states(), 500);
        assert_eq!(r.mdp.gamma(), 0.95);
        assert_eq!(r.features.dim(), 3000);
    }
}
