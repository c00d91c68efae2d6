//! Random instance generators for the property suites.

use rand::Rng;

use crate::bellmin::SetValuedModel;
use crate::mdp::{classify_all, SafetyLabel, TabularMdp};
use crate::stochastic::{
    min_failure_within, solve_safety_functions, stochastic_penalty, PClass, StochasticMdp,
    StochasticPenaltyParams,
};

/// Size limits for random deterministic MDPs.
#[derive(Debug, Clone, Copy)]
pub struct MdpShape {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_unsafe_fraction: f64,
    pub gamma: f64,
}

impl Default for MdpShape {
    fn default() -> Self {
        Self {
            max_states: 20,
            max_actions: 4,
            max_unsafe_fraction: 0.25,
            gamma: 0.9,
        }
    }
}

/// One random MDP with rewards in `[0, 1]` (declared bounds `[0, 1]`).
///
/// A random subset of states is wired to fall into the unsafe set through
/// chains, so irrecoverable states are common; the rest transition uniformly.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, shape: &MdpShape) -> TabularMdp {
    let n = rng.random_range(4..=shape.max_states.max(4));
    let m = rng.random_range(2..=shape.max_actions.max(2));
    let max_unsafe = ((shape.max_unsafe_fraction * n as f64).floor() as usize).max(1);
    let n_unsafe = rng.random_range(1..=max_unsafe);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let unsafe_states: Vec<usize> = order[..n_unsafe].to_vec();
    let mut doomed: Vec<usize> = Vec::new();
    let mut transition = vec![vec![0usize; m]; n];
    let mut reward = vec![vec![0.0; m]; n];
    for &s in &order {
        for a in 0..m {
            reward[s][a] = rng.random::<f64>();
        }
        if unsafe_states.contains(&s) {
            for a in 0..m {
                transition[s][a] = rng.random_range(0..n);
            }
        } else if rng.random::<f64>() < 0.3 {
            // Every action lands in the unsafe set or an earlier doomed state.
            let sinks: Vec<usize> = unsafe_states.iter().chain(&doomed).copied().collect();
            for a in 0..m {
                transition[s][a] = sinks[rng.random_range(0..sinks.len())];
            }
            doomed.push(s);
        } else {
            for a in 0..m {
                transition[s][a] = rng.random_range(0..n);
            }
        }
    }
    TabularMdp::with_bounds(shape.gamma, transition, reward, &unsafe_states, 0.0, 1.0)
        .expect("generator produces valid MDPs")
}

/// Rejection-samples until the MDP has at least one safe and one
/// irrecoverable state. Returns the MDP with its labels.
pub fn random_mdp_with_classes<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &MdpShape,
) -> (TabularMdp, Vec<SafetyLabel>) {
    loop {
        let mdp = random_mdp(rng, shape);
        let labels = classify_all(&mdp);
        let has_safe = labels.iter().any(|l| *l == SafetyLabel::Safe);
        let has_irrec = labels
            .iter()
            .any(|l| matches!(l, SafetyLabel::Irrecoverable { .. }));
        if has_safe && has_irrec {
            return (mdp, labels);
        }
    }
}

/// States with at least one safe and at least one unsafe action.
pub fn mixed_states(mdp: &TabularMdp, labels: &[SafetyLabel]) -> Vec<usize> {
    (0..mdp.n_states())
        .filter(|&s| !mdp.is_unsafe(s))
        .filter(|&s| {
            let safe = (0..mdp.n_actions()).any(|a| labels[mdp.next(s, a)] == SafetyLabel::Safe);
            let bad = (0..mdp.n_actions()).any(|a| labels[mdp.next(s, a)].is_unsafe());
            safe && bad
        })
        .collect()
}

/// A calibrated model: each true successor plus every other state with
/// probability `inflation`.
pub fn inflated_model<R: Rng + ?Sized>(
    rng: &mut R,
    mdp: &TabularMdp,
    inflation: f64,
) -> SetValuedModel {
    let mut model = SetValuedModel::exact(mdp);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for t in 0..mdp.n_states() {
                if rng.random::<f64>() < inflation {
                    model.insert(s, a, t);
                }
            }
        }
    }
    model
}

/// A random Q table with entries in `[-scale, scale]`.
pub fn random_q<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    scale: f64,
) -> crate::mdp::QFunction {
    crate::mdp::QFunction::from_fn(n_states, n_actions, |_, _| rng.random_range(-scale..=scale))
}

/// A stochastic instance together with the thresholds it satisfies.
#[derive(Debug, Clone)]
pub struct StochasticInstance {
    pub mdp: StochasticMdp,
    pub p: f64,
    pub q: f64,
    pub horizon: u32,
    pub penalty: StochasticPenaltyParams,
}

/// Constructs a small stochastic MDP with "risky" actions that fail quickly
/// with high probability, then picks `p` in a gap of the `μ*` spectrum and
/// the largest `q` for which the rapid-failure assumption holds. Instances
/// where the penalty formula is inapplicable, or where no p-safe state has
/// both kinds of action, are rejected.
pub fn stochastic_instance<R: Rng + ?Sized>(rng: &mut R, gamma: f64) -> StochasticInstance {
    loop {
        if let Some(inst) = try_stochastic_instance(rng, gamma) {
            return inst;
        }
    }
}

fn try_stochastic_instance<R: Rng + ?Sized>(rng: &mut R, gamma: f64) -> Option<StochasticInstance> {
    let n = rng.random_range(4..=7);
    let m = rng.random_range(2..=3);
    let unsafe_state = n - 1;
    let horizon = rng.random_range(1..=2u32);
    let mut transition = vec![vec![vec![0.0; n]; m]; n];
    let mut reward = vec![vec![0.0; m]; n];
    let safe_states: Vec<usize> = (0..n - 1).collect();
    for s in 0..n {
        for a in 0..m {
            let probs = &mut transition[s][a];
            if s == unsafe_state {
                probs[s] = 1.0;
                continue;
            }
            let risky = rng.random::<f64>() < 0.4;
            if risky {
                // Most of the mass goes straight to the unsafe state.
                let fail = rng.random_range(0.7..0.98);
                probs[unsafe_state] = fail;
                let t = safe_states[rng.random_range(0..safe_states.len())];
                probs[t] += 1.0 - fail;
                reward[s][a] = rng.random_range(0.5..=1.0);
            } else {
                let k = rng.random_range(1..=2);
                let mut weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                for w in weights {
                    let t = safe_states[rng.random_range(0..safe_states.len())];
                    probs[t] += w;
                }
                reward[s][a] = rng.random_range(0.0..=0.6);
            }
            // Renormalize against rounding.
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
        }
    }
    let mdp = StochasticMdp::new(gamma, transition, reward, &[unsafe_state]).ok()?;
    let sf = solve_safety_functions(&mdp).ok()?;

    let mut levels: Vec<f64> = (0..n - 1)
        .flat_map(|s| (0..m).map(move |a| (s, a)))
        .map(|(s, a)| sf.mu(s, a))
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    // Threshold p: midpoint of the first gap above the lowest level.
    let (lo, hi) = levels
        .windows(2)
        .map(|w| (w[0], w[1]))
        .find(|(a, b)| b - a > 0.05)?;
    let p = 0.5 * (lo + hi);

    let g = min_failure_within(&mdp, horizon);
    let mut q = 1.0f64;
    let mut any_irrec = false;
    for s in 0..n - 1 {
        for a in 0..m {
            if crate::stochastic::p_classify(&sf, s, a, p) == PClass::PIrrecoverable {
                any_irrec = true;
                q = q.min(g[s * m + a]);
            }
        }
    }
    if !any_irrec {
        return None;
    }
    let mixed = (0..n - 1).any(|s| {
        sf.nu(s) < p && (0..m).any(|a| sf.mu(s, a) < p) && (0..m).any(|a| sf.mu(s, a) >= p)
    });
    if !mixed {
        return None;
    }
    let penalty = stochastic_penalty(mdp.r_min(), mdp.r_max(), gamma, horizon, p, q, 1e-6).ok()?;
    Some(StochasticInstance {
        mdp,
        p,
        q,
        horizon,
        penalty,
    })
}
