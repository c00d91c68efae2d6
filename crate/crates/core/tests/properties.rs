use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_mbrl::bellmin::{bellmin_backup, solve_bellmin, SetValuedModel};
use safe_mbrl::buffer::{sample_mixed, ReplayBuffer, Transition};
use safe_mbrl::dynamics::Normalizer;
use safe_mbrl::generate::{
    inflated_model, random_mdp, random_mdp_with_classes, random_q, MdpShape,
};
use safe_mbrl::mdp::{
    bellman_backup, classify_all, compute_terminal_cost, default_margin, greedy_rollout,
    solve_q_star, terminal_cost_bound, transform_terminal_cost, unsafe_action_horizon, QFunction,
    SafetyLabel, TabularMdp, DEFAULT_TOL,
};
use safe_mbrl::nn::OptimizerKind;
use safe_mbrl::sac::{critic_target, Critic, Policy, Scaling, TargetMode};
use safe_mbrl::stochastic::{solve_safety_functions, stochastic_penalty, StochasticMdp};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shape(gamma: f64) -> MdpShape {
    MdpShape {
        gamma,
        ..MdpShape::default()
    }
}

fn cost_for(mdp: &TabularMdp, horizon: u32) -> f64 {
    let bound = terminal_cost_bound(mdp.r_min(), mdp.r_max(), mdp.gamma(), horizon).unwrap();
    compute_terminal_cost(
        mdp.r_min(),
        mdp.r_max(),
        mdp.gamma(),
        horizon,
        default_margin(bound),
    )
    .unwrap()
}

fn leq(a: &QFunction, b: &QFunction, slack: f64) -> bool {
    a.values()
        .iter()
        .zip(b.values())
        .all(|(x, y)| *x <= *y + slack)
}

/// Brute force over every action sequence of length `n_states` from `s`.
/// Returns `None` if some sequence never meets the unsafe set (the state is
/// safe, since such a path must repeat a state), otherwise the latest
/// first-violation time over all sequences.
fn enumerate(mdp: &TabularMdp, s: usize, depth: u32, limit: u32) -> Option<u32> {
    if mdp.is_unsafe(s) {
        return Some(depth);
    }
    if depth == limit {
        return None;
    }
    let mut latest = 0;
    for a in 0..mdp.n_actions() {
        latest = latest.max(enumerate(mdp, mdp.next(s, a), depth + 1, limit)?);
    }
    Some(latest)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_iteration_contracts(seed in any::<u64>(), gamma in 0.5..0.99f64) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, &shape(gamma));
        let q1 = random_q(&mut r, mdp.n_states(), mdp.n_actions(), 10.0);
        let q2 = random_q(&mut r, mdp.n_states(), mdp.n_actions(), 10.0);
        let lhs = bellman_backup(&q1, &mdp).distance(&bellman_backup(&q2, &mdp));
        prop_assert!(lhs <= gamma * q1.distance(&q2) + 1e-12);
    }

    #[test]
    fn bellmin_contracts(seed in any::<u64>(), gamma in 0.5..0.99f64, inflation in 0.0..0.5f64) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, &shape(gamma));
        let model = inflated_model(&mut r, &mdp, inflation);
        let transformed = transform_terminal_cost(&mdp, r.random_range(0.0..20.0)).unwrap();
        let q1 = random_q(&mut r, mdp.n_states(), mdp.n_actions(), 50.0);
        let q2 = random_q(&mut r, mdp.n_states(), mdp.n_actions(), 50.0);
        let b1 = bellmin_backup(&q1, &model, &transformed).unwrap();
        let b2 = bellmin_backup(&q2, &model, &transformed).unwrap();
        prop_assert!(b1.distance(&b2) <= gamma * q1.distance(&q2) + 1e-12);
    }

    #[test]
    fn bellmin_is_monotone_and_below_bellman(seed in any::<u64>(), inflation in 0.0..0.5f64) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, &shape(0.9));
        let model = inflated_model(&mut r, &mdp, inflation);
        let transformed = transform_terminal_cost(&mdp, 5.0).unwrap();
        let lo = random_q(&mut r, mdp.n_states(), mdp.n_actions(), 10.0);
        let hi = QFunction::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| lo.get(s, a) + r.random_range(0.0..3.0));
        let b_lo = bellmin_backup(&lo, &model, &transformed).unwrap();
        prop_assert!(leq(&b_lo, &bellmin_backup(&hi, &model, &transformed).unwrap(), 1e-12));
        prop_assert!(leq(&b_lo, &bellman_backup(&hi, &transformed), 1e-12));
    }

    #[test]
    fn pessimistic_q_lower_bounds_true_q(seed in any::<u64>(), inflation in 0.0..0.4f64) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, &shape(0.9));
        let c = r.random_range(0.0..20.0);
        let model = inflated_model(&mut r, &mdp, inflation);
        let pess = solve_bellmin(&model, &mdp, c, DEFAULT_TOL).unwrap();
        let truth = solve_q_star(&transform_terminal_cost(&mdp, c).unwrap(), DEFAULT_TOL).unwrap();
        prop_assert!(leq(&pess.q, &truth, 1e-8));
    }

    #[test]
    fn inflating_a_model_never_raises_pessimistic_q(seed in any::<u64>(), extra in 1usize..20) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, &shape(0.9));
        let small = inflated_model(&mut r, &mdp, 0.1);
        let mut big = small.clone();
        for _ in 0..extra {
            let (s, a, t) = (
                r.random_range(0..mdp.n_states()),
                r.random_range(0..mdp.n_actions()),
                r.random_range(0..mdp.n_states()),
            );
            big.insert(s, a, t);
        }
        let q_small = solve_bellmin(&small, &mdp, 3.0, DEFAULT_TOL).unwrap().q;
        let q_big = solve_bellmin(&big, &mdp, 3.0, DEFAULT_TOL).unwrap().q;
        prop_assert!(leq(&q_big, &q_small, 1e-8));
    }

    #[test]
    fn exact_model_recovers_true_q(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, &shape(0.9));
        let pess = solve_bellmin(&SetValuedModel::exact(&mdp), &mdp, 2.0, DEFAULT_TOL).unwrap();
        let truth = solve_q_star(&transform_terminal_cost(&mdp, 2.0).unwrap(), DEFAULT_TOL).unwrap();
        prop_assert!(pess.q.distance(&truth) < 1e-7);
    }

    #[test]
    fn absorbing_unsafe_states_pay_minus_c(seed in any::<u64>(), c in 0.0..50.0f64) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, &shape(0.9));
        let t = transform_terminal_cost(&mdp, c).unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                if mdp.is_unsafe(s) {
                    prop_assert_eq!(t.next(s, a), s);
                    prop_assert_eq!(t.reward(s, a), -c);
                } else {
                    prop_assert_eq!(t.next(s, a), mdp.next(s, a));
                    prop_assert_eq!(t.reward(s, a), mdp.reward(s, a));
                }
            }
        }
    }

    #[test]
    fn classification_matches_enumeration(seed in any::<u64>(), wide in any::<bool>()) {
        let mut r = rng(seed);
        let s = if wide {
            MdpShape { max_states: 8, max_actions: 3, ..shape(0.9) }
        } else {
            MdpShape { max_states: 12, max_actions: 2, ..shape(0.9) }
        };
        let mdp = random_mdp(&mut r, &s);
        let labels = classify_all(&mdp);
        let n = mdp.n_states() as u32;
        for (state, label) in labels.iter().enumerate() {
            let expected = match enumerate(&mdp, state, 0, n) {
                _ if mdp.is_unsafe(state) => SafetyLabel::Violation,
                None => SafetyLabel::Safe,
                Some(h) => SafetyLabel::Irrecoverable { horizon_to_violation: h },
            };
            prop_assert_eq!(*label, expected, "state {}", state);
        }
    }

    #[test]
    fn greedy_policy_from_safe_states_stays_safe(seed in any::<u64>(), gamma in 0.8..0.99f64) {
        let mut r = rng(seed);
        let (mdp, labels) = random_mdp_with_classes(&mut r, &shape(gamma));
        let h = unsafe_action_horizon(&mdp, &labels);
        let c = cost_for(&mdp, h);
        let q = solve_q_star(&transform_terminal_cost(&mdp, c).unwrap(), DEFAULT_TOL).unwrap();
        for s in (0..mdp.n_states()).filter(|&s| labels[s] == SafetyLabel::Safe) {
            let path = greedy_rollout(&mdp, &q, s, 10 * h as usize);
            prop_assert!(path.iter().all(|&t| !mdp.is_unsafe(t)), "start {} path {:?}", s, path);
        }
    }

    #[test]
    fn terminal_cost_exceeds_bound_and_grows_with_horizon(
        r_min in -2.0..0.5f64,
        span in 0.1..3.0f64,
        gamma in 0.5..0.999f64,
        h in 1u32..40,
    ) {
        let r_max = r_min + span;
        let b1 = terminal_cost_bound(r_min, r_max, gamma, h).unwrap();
        let b2 = terminal_cost_bound(r_min, r_max, gamma, h + 1).unwrap();
        prop_assert!(b2 >= b1);
        let c = compute_terminal_cost(r_min, r_max, gamma, h, default_margin(b1)).unwrap();
        prop_assert!(c > b1.max(0.0));
    }
}

fn random_stochastic(r: &mut ChaCha8Rng) -> StochasticMdp {
    let n = r.random_range(3..=7);
    let m = r.random_range(2..=3);
    let transition = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let w: Vec<f64> = (0..n)
                        .map(|_| {
                            if r.random::<f64>() < 0.5 {
                                r.random::<f64>()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let total: f64 = w.iter().sum();
                    if total == 0.0 {
                        let mut one = vec![0.0; n];
                        one[r.random_range(0..n)] = 1.0;
                        one
                    } else {
                        w.iter().map(|x| x / total).collect()
                    }
                })
                .collect()
        })
        .collect();
    let reward = (0..n)
        .map(|_| (0..m).map(|_| r.random::<f64>()).collect())
        .collect();
    StochasticMdp::new(0.9, transition, reward, &[0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn safety_functions_are_probabilities(seed in any::<u64>()) {
        let mdp = random_stochastic(&mut rng(seed));
        let sf = solve_safety_functions(&mdp).unwrap();
        for s in 0..mdp.n_states() {
            let row: Vec<f64> = (0..mdp.n_actions()).map(|a| sf.mu(s, a)).collect();
            prop_assert!(row.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
            prop_assert_eq!(sf.nu(s), row.iter().cloned().fold(f64::INFINITY, f64::min));
            if mdp.is_unsafe(s) {
                prop_assert!(row.iter().all(|v| *v == 1.0));
            }
        }
    }

    #[test]
    fn shifting_mass_to_unsafe_never_lowers_mu(seed in any::<u64>(), shift in 0.0..1.0f64) {
        let mut r = rng(seed);
        let mdp = random_stochastic(&mut r);
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        let (s0, a0) = (r.random_range(1..n), r.random_range(0..m));
        let mut transition: Vec<Vec<Vec<f64>>> =
            (0..n).map(|s| (0..m).map(|a| mdp.probs(s, a).to_vec()).collect()).collect();
        let row = &mut transition[s0][a0];
        for p in row.iter_mut() {
            *p *= 1.0 - shift;
        }
        row[0] += shift;
        let reward = (0..n).map(|s| (0..m).map(|a| mdp.reward(s, a)).collect()).collect();
        let riskier = StochasticMdp::new(0.9, transition, reward, &[0]).unwrap();
        let before = solve_safety_functions(&mdp).unwrap();
        let after = solve_safety_functions(&riskier).unwrap();
        for s in 0..n {
            for a in 0..m {
                prop_assert!(after.mu(s, a) >= before.mu(s, a) - 1e-9);
            }
        }
    }

    #[test]
    fn stochastic_penalty_reduces_to_deterministic(
        r_min in -1.0..0.5f64,
        span in 0.1..2.0f64,
        gamma in 0.5..0.99f64,
        h in 1u32..30,
    ) {
        let r_max = r_min + span;
        let bound = terminal_cost_bound(r_min, r_max, gamma, h).unwrap();
        let params = stochastic_penalty(r_min, r_max, gamma, h, 0.0, 1.0, 1e-6).unwrap();
        let raw = params.alpha1.max(params.alpha2);
        prop_assert!((raw - bound).abs() <= 1e-12 * bound.abs().max(1.0));
        prop_assert!((params.c - 1e-6 - raw.max(0.0)).abs() <= 1e-12 * raw.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mixed_batches_draw_ten_percent_real(seed in any::<u64>()) {
        let mut real = ReplayBuffer::new(100).unwrap();
        let mut model = ReplayBuffer::new(100).unwrap();
        for i in 0..50 {
            real.push(Transition::new(vec![i as f64], vec![0.0], 1.0, vec![0.0], false));
            model.push(Transition::new(vec![i as f64], vec![0.0], 0.0, vec![0.0], false));
        }
        let mut r = rng(seed);
        let (batches, size) = (10_000usize, 32usize);
        let mut from_real = 0usize;
        for _ in 0..batches {
            from_real += sample_mixed(&real, &model, size, 0.1, &mut r).iter().filter(|t| t.reward == 1.0).count();
        }
        let n = (batches * size) as f64;
        let frac = from_real as f64 / n;
        let sigma = (0.1 * 0.9 / n).sqrt();
        prop_assert!((frac - 0.1).abs() <= 3.0 * sigma, "fraction {} sigma {}", frac, sigma);
    }

    #[test]
    fn normalizer_ignores_observation_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let data: Vec<Vec<f64>> = (0..64).map(|_| (0..3).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let mut forward = Normalizer::new(3);
        let mut backward = Normalizer::new(3);
        data.iter().for_each(|x| forward.observe(x));
        data.iter().rev().for_each(|x| backward.observe(x));
        for (a, b) in forward.mean().iter().zip(backward.mean()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in forward.std().iter().zip(backward.std()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_targets_respect_both_critics_and_unsafe_constant(seed in any::<u64>(), c in 0.0..5.0f64) {
        let mut r = rng(seed);
        let scaling = Scaling { obs_scale: vec![1.0, 1.0], act_low: vec![-1.0], act_high: vec![1.0] };
        let policy = Policy::new(scaling.clone(), &[8], -5.0, 2.0, &mut r).unwrap();
        let critic = Critic::new(scaling, &[8], OptimizerKind::Adam, 1e-3, &mut r).unwrap();
        let batch: Vec<Transition> = (0..16)
            .map(|i| {
                let next = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
                Transition::new(vec![0.0, 0.0], vec![0.0], r.random::<f64>(), next, i % 4 == 0)
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let (gamma, alpha) = (0.95, 0.0);
        let targets = critic_target(&refs, &policy, &critic, c, gamma, alpha, TargetMode::Average, None);
        for (t, y) in batch.iter().zip(&targets) {
            if t.unsafe_next {
                prop_assert_eq!(*y, t.reward + gamma * (-c / (1.0 - gamma)));
            } else {
                let a = policy.mean_action(&t.next_obs);
                let x = [t.next_obs[0], t.next_obs[1], a[0]];
                let (q1, q2) = (critic.target1.forward(&x, 1)[0], critic.target2.forward(&x, 1)[0]);
                prop_assert!((*y - (t.reward + gamma * q1.min(q2))).abs() < 1e-12);
                prop_assert!(*y <= t.reward + gamma * q1 + 1e-12 && *y <= t.reward + gamma * q2 + 1e-12);
            }
        }
    }
}
