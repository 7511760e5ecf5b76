use bayesdice_core::mdp::{bellman_flow_residual, optimal_policy, primal_policy_value};
use bayesdice_core::{
    build_bandit, build_gridworld, exact_policy_value, exact_visitation, make_policy, seed, GridworldKind,
    PolicyFamilySpec, TabularMdp, TabularPolicy,
};
use proptest::prelude::*;
use rand::Rng;

fn frozenlake() -> TabularMdp {
    build_gridworld(GridworldKind::Frozenlake4x4, 1.0 / 3.0).unwrap()
}

fn eps_greedy(mdp: &TabularMdp, eps: f64) -> TabularPolicy {
    make_policy(mdp, &PolicyFamilySpec::epsilon_greedy(eps, optimal_policy(mdp))).unwrap()
}

/// With `T ~ Geometric(1 - gamma)` on `{0, 1, ...}`, `E[r_T] = (1 - gamma) E[sum_t gamma^t r_t]`.
#[test]
fn frozenlake_value_matches_rollouts() {
    let mdp = frozenlake();
    let pi = eps_greedy(&mdp, 0.1);
    let exact = exact_policy_value(&mdp, &pi).unwrap();
    let mut rng = seed::rng(2024);
    let episodes = 100_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..episodes {
        let mut s = mdp.sample_initial_state(&mut rng);
        let r = loop {
            let a = pi.sample_action(&mut rng, s);
            if rng.random::<f64>() >= mdp.gamma() {
                break mdp.reward_mean(s, a);
            }
            s = mdp.sample_next_state(&mut rng, s, a);
        };
        sum += r;
        sum_sq += r * r;
    }
    let n = episodes as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
    assert!((mean - exact).abs() <= 3.0 * se, "rollout {mean} +- {se} vs exact {exact}");
}

#[test]
fn visitation_residuals_on_all_environments() {
    let fl = frozenlake();
    let taxi = build_gridworld(GridworldKind::Taxi5x5, 0.1).unwrap();
    let bandit = build_bandit(0.7, 0.3).unwrap();
    for (mdp, pi) in [
        (&fl, eps_greedy(&fl, 0.1)),
        (&fl, TabularPolicy::uniform(16, 4)),
        (&taxi, eps_greedy(&taxi, 0.2)),
        (&bandit, make_policy(&bandit, &PolicyFamilySpec::bandit_alpha(0.8)).unwrap()),
    ] {
        let d = exact_visitation(mdp, &pi).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        assert!(bellman_flow_residual(mdp, &pi, &d) <= 1e-8, "{}", mdp.env_id());
        let dual = exact_policy_value(mdp, &pi).unwrap();
        let primal = primal_policy_value(mdp, &pi).unwrap();
        assert!((dual - primal).abs() <= 1e-8, "{}: {dual} vs {primal}", mdp.env_id());
    }
}

fn random_policy(num_states: usize, num_actions: usize, raw: &[f64]) -> TabularPolicy {
    let rows = raw
        .chunks(num_actions)
        .take(num_states)
        .map(|r| {
            let total: f64 = r.iter().sum();
            r.iter().map(|x| x / total).collect()
        })
        .collect();
    TabularPolicy::new(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_value_is_visitation_inner_product(
        raw in proptest::collection::vec(0.01f64..1.0, 64),
        slip in 0.0f64..0.5,
    ) {
        let mdp = build_gridworld(GridworldKind::Frozenlake4x4, slip).unwrap();
        let pi = random_policy(16, 4, &raw);
        let d = exact_visitation(&mdp, &pi).unwrap();
        let inner: f64 = d.iter().zip(mdp.reward_means()).map(|(x, r)| x * r).sum();
        let value = exact_policy_value(&mdp, &pi).unwrap();
        prop_assert!((inner - value).abs() <= 1e-10);
        prop_assert!((primal_policy_value(&mdp, &pi).unwrap() - value).abs() <= 1e-8);
    }

    #[test]
    fn bandit_value_is_monotone_in_alpha(
        p_sub in 0.0f64..0.9,
        gap in 0.01f64..0.1,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let mdp = build_bandit(p_sub + gap, p_sub).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        let v = |alpha| exact_policy_value(&mdp, &make_policy(&mdp, &PolicyFamilySpec::bandit_alpha(alpha)).unwrap()).unwrap();
        prop_assert!(v(lo) < v(hi));
    }
}
