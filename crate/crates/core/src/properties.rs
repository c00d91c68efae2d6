//! Randomized property checks for the exact planning results, the
//! approximator gradients and the environments' declared horizons.
//!
//! Each check draws its instances from a seeded generator and reports the
//! number of trials and failures. They back the `verify` command and the
//! acceptance suite.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bellmin::{bellmin_backup, certify_action, check_calibrated, solve_bellmin};
use crate::dynamics::{EnsembleConfig, GaussianMember};
use crate::envs::car::{CarAction, CarStop, CarStopParams};
use crate::envs::conveyor::{Conveyor, ConveyorParams, Move};
use crate::envs::point::{PointHazard, PointHazardParams};
use crate::envs::Task;
use crate::error::Result;
use crate::generate::{
    inflated_model, mixed_states, random_mdp, random_mdp_with_classes, random_q,
    stochastic_instance, MdpShape,
};
use crate::mdp::{
    compute_terminal_cost, default_margin, greedy_rollout, solve_q_star, terminal_cost_bound,
    transform_terminal_cost, unsafe_action_horizon, SafetyLabel, DEFAULT_TOL,
};
use crate::nn::{Mlp, Topology};
use crate::sac::{
    critic_loss_and_grad, policy_loss_and_grad, EntropyCoef, Sac, SacConfig, Scaling,
};
use crate::stochastic::{separation_failures, stochastic_penalty};

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub trials: usize,
    pub failures: usize,
    pub detail: String,
    pub elapsed_secs: f64,
}

impl PropertyResult {
    fn finish(
        name: &str,
        started: Instant,
        trials: usize,
        failures: usize,
        detail: String,
    ) -> Self {
        Self {
            name: name.to_string(),
            passed: failures == 0 && trials > 0,
            trials,
            failures,
            detail,
            elapsed_secs: started.elapsed().as_secs_f64(),
        }
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn terminal_cost(r_min: f64, r_max: f64, gamma: f64, horizon: u32) -> Result<f64> {
    let bound = terminal_cost_bound(r_min, r_max, gamma, horizon)?;
    compute_terminal_cost(r_min, r_max, gamma, horizon, default_margin(bound))
}

/// `‖B̲Q − B̲Q′‖∞ ≤ γ‖Q − Q′‖∞` on random MDPs, calibrated models and Q pairs.
pub fn bellmin_contraction(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 1);
    let mut failures = 0;
    let mut worst_ratio = 0.0f64;
    for _ in 0..trials {
        let shape = MdpShape {
            gamma: rng.random_range(0.05..0.999),
            ..MdpShape::default()
        };
        let mdp = random_mdp(&mut rng, &shape);
        let inflation = rng.random_range(0.0..0.5);
        let model = inflated_model(&mut rng, &mdp, inflation);
        let c = rng.random_range(0.0..20.0);
        let t = transform_terminal_cost(&mdp, c)?;
        let scale = rng.random_range(0.1..100.0);
        let q1 = random_q(&mut rng, mdp.n_states(), mdp.n_actions(), scale);
        let q2 = random_q(&mut rng, mdp.n_states(), mdp.n_actions(), scale);
        let lhs = bellmin_backup(&q1, &model, &t)?.distance(&bellmin_backup(&q2, &model, &t)?);
        let rhs = mdp.gamma() * q1.distance(&q2);
        worst_ratio = worst_ratio.max(lhs / rhs);
        // Allow one rounding step of slack relative to the magnitudes involved.
        if lhs > rhs + 1e-12 * scale {
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "bellmin-contraction",
        started,
        trials,
        failures,
        format!("max ‖B̲Q − B̲Q′‖ / (γ‖Q − Q′‖) = {worst_ratio:.6}"),
    ))
}

/// `Q̲* ≤ Q̃* + 1e-8` for randomly inflated calibrated models.
pub fn lower_bound(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 2);
    let mut failures = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..trials {
        let shape = MdpShape {
            gamma: rng.random_range(0.5..0.99),
            ..MdpShape::default()
        };
        let mdp = random_mdp(&mut rng, &shape);
        let inflation = rng.random_range(0.0..0.4);
        let model = inflated_model(&mut rng, &mdp, inflation);
        debug_assert!(check_calibrated(&model, &mdp));
        let c = rng.random_range(0.0..10.0);
        let tol = 1e-10;
        let pess = solve_bellmin(&model, &mdp, c, tol)?;
        let exact = solve_q_star(&transform_terminal_cost(&mdp, c)?, tol)?;
        let excess = pess
            .q
            .values()
            .iter()
            .zip(exact.values())
            .map(|(lo, hi)| lo - hi)
            .fold(f64::NEG_INFINITY, f64::max);
        max_excess = max_excess.max(excess);
        if excess > 1e-8 {
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "lower-bound",
        started,
        trials,
        failures,
        format!("max (Q̲* − Q̃*) = {max_excess:.3e}"),
    ))
}

/// At every state with both safe and unsafe actions, every safe action
/// strictly outvalues every unsafe one after the terminal-cost transform.
///
/// The horizon fed to the penalty is the brute-force worst-case violation
/// time counted from the state where the unsafe action is taken.
pub fn penalty_separation(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 3);
    let mut failures = 0;
    let mut checked_pairs = 0usize;
    let mut min_gap = f64::INFINITY;
    let mut done = 0;
    while done < trials {
        let shape = MdpShape {
            gamma: rng.random_range(0.8..0.99),
            ..MdpShape::default()
        };
        let (mdp, labels) = random_mdp_with_classes(&mut rng, &shape);
        let mixed = mixed_states(&mdp, &labels);
        if mixed.is_empty() {
            continue;
        }
        done += 1;
        let horizon = unsafe_action_horizon(&mdp, &labels);
        let c = terminal_cost(mdp.r_min(), mdp.r_max(), mdp.gamma(), horizon)?;
        let q = solve_q_star(&transform_terminal_cost(&mdp, c)?, DEFAULT_TOL)?;
        let mut ok = true;
        for &s in &mixed {
            let (safe, bad): (Vec<usize>, Vec<usize>) =
                (0..mdp.n_actions()).partition(|&a| labels[mdp.next(s, a)] == SafetyLabel::Safe);
            for &a in &safe {
                for &b in &bad {
                    checked_pairs += 1;
                    let gap = q.get(s, a) - q.get(s, b);
                    min_gap = min_gap.min(gap);
                    if !(gap > 0.0) {
                        ok = false;
                    }
                }
            }
        }
        if !ok {
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "penalty-separation",
        started,
        trials,
        failures,
        format!("{checked_pairs} (safe, unsafe) action pairs; min Q̃ gap = {min_gap:.3e}"),
    ))
}

/// Greedy policy on the exactly solved terminal-cost MDP never leaves the
/// safe set from a safe start.
pub fn greedy_safety(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 4);
    let mut failures = 0;
    let mut starts = 0;
    for _ in 0..trials {
        let shape = MdpShape {
            gamma: rng.random_range(0.8..0.99),
            ..MdpShape::default()
        };
        let (mdp, labels) = random_mdp_with_classes(&mut rng, &shape);
        let horizon = unsafe_action_horizon(&mdp, &labels);
        let c = terminal_cost(mdp.r_min(), mdp.r_max(), mdp.gamma(), horizon)?;
        let q = solve_q_star(&transform_terminal_cost(&mdp, c)?, DEFAULT_TOL)?;
        let steps = 10 * horizon as usize;
        let mut ok = true;
        for s in (0..mdp.n_states()).filter(|&s| labels[s] == SafetyLabel::Safe) {
            starts += 1;
            if greedy_rollout(&mdp, &q, s, steps)
                .iter()
                .any(|&t| mdp.is_unsafe(t))
            {
                ok = false;
            }
        }
        if !ok {
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "greedy-safety",
        started,
        trials,
        failures,
        format!("{starts} safe starts simulated for 10·H* steps"),
    ))
}

/// From every certified state, the greedy policy of `Q̲*` (calibrated model,
/// terminal cost from the penalty bound) never visits an unsafe state within
/// `10·H*` steps.
///
/// The detail line also reports how many certified actions led directly
/// into an unsafe or irrecoverable state, which is the single-step claim.
pub fn theorem_safety(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 5);
    let mut failures = 0;
    let mut certified_starts = 0;
    let mut violations = 0;
    let mut first_step_unsafe = 0;
    for _ in 0..trials {
        let shape = MdpShape {
            gamma: rng.random_range(0.8..0.99),
            ..MdpShape::default()
        };
        let (mdp, labels) = random_mdp_with_classes(&mut rng, &shape);
        let inflation = rng.random_range(0.0..0.3);
        let model = inflated_model(&mut rng, &mdp, inflation);
        let horizon = unsafe_action_horizon(&mdp, &labels);
        let c = terminal_cost(mdp.r_min(), mdp.r_max(), mdp.gamma(), horizon)?;
        let pess = solve_bellmin(&model, &mdp, c, DEFAULT_TOL)?;
        let steps = 10 * horizon as usize;
        let mut bad = 0;
        for s in 0..mdp.n_states() {
            let cert = certify_action(&pess, s, mdp.r_min(), mdp.gamma());
            if !cert.certified {
                continue;
            }
            certified_starts += 1;
            if labels[mdp.next(s, cert.action)].is_unsafe() {
                first_step_unsafe += 1;
            }
            bad += greedy_rollout(&mdp, &pess.q, s, steps)
                .iter()
                .filter(|&&t| mdp.is_unsafe(t))
                .count();
        }
        violations += bad;
        if bad > 0 {
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "theorem-safety",
        started,
        trials,
        failures,
        format!(
            "{certified_starts} certified starts; {violations} unsafe visits; \
             {first_step_unsafe} certified actions led to an unsafe successor"
        ),
    ))
}

/// Every certified action leads to a safe successor (calibrated model,
/// terminal cost from the penalty bound).
pub fn certified_action_safety(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 8);
    let mut failures = 0;
    let mut certified = 0;
    for _ in 0..trials {
        let shape = MdpShape {
            gamma: rng.random_range(0.8..0.99),
            ..MdpShape::default()
        };
        let (mdp, labels) = random_mdp_with_classes(&mut rng, &shape);
        let inflation = rng.random_range(0.0..0.3);
        let model = inflated_model(&mut rng, &mdp, inflation);
        let horizon = unsafe_action_horizon(&mdp, &labels);
        let c = terminal_cost(mdp.r_min(), mdp.r_max(), mdp.gamma(), horizon)?;
        let pess = solve_bellmin(&model, &mdp, c, DEFAULT_TOL)?;
        let mut ok = true;
        for s in 0..mdp.n_states() {
            let cert = certify_action(&pess, s, mdp.r_min(), mdp.gamma());
            if cert.certified {
                certified += 1;
                ok &= labels[mdp.next(s, cert.action)] == SafetyLabel::Safe;
            }
        }
        if !ok {
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "certified-action-safety",
        started,
        trials,
        failures,
        format!("{certified} certified actions checked against brute-force labels"),
    ))
}

/// The stochastic penalty at `p = 0, q = 1` equals the deterministic bound.
pub fn stochastic_reduction(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 6);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let a: f64 = rng.random_range(-5.0..5.0);
        let b: f64 = rng.random_range(-5.0..5.0);
        let (r_min, r_max) = (a.min(b), a.max(b));
        let gamma = rng.random_range(0.5..0.999);
        let horizon = rng.random_range(1..=30u32);
        let det = terminal_cost_bound(r_min, r_max, gamma, horizon)?;
        let sto = stochastic_penalty(r_min, r_max, gamma, horizon, 0.0, 1.0, 1e-6)?;
        let rel = ((sto.alpha1 - det) / det.abs().max(f64::MIN_POSITIVE)).abs();
        worst = worst.max(rel);
        if rel > 1e-12 {
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "stochastic-reduction",
        started,
        trials,
        failures,
        format!("max relative error {worst:.3e}"),
    ))
}

/// On constructed stochastic MDPs satisfying the rapid-failure assumption,
/// `C = max{α₁, α₂, 0} + margin` separates p-safe from p-irrecoverable actions.
pub fn stochastic_separation(seed: u64, trials: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 7);
    let mut failures = 0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..trials {
        let inst = stochastic_instance(&mut rng, 0.9);
        let fails = separation_failures(&inst.mdp, inst.p, inst.q, inst.horizon, inst.penalty.c)?;
        if let Some(f) = fails.first() {
            min_gap = min_gap.min(f.gap);
            failures += 1;
        }
    }
    Ok(PropertyResult::finish(
        "stochastic-separation",
        started,
        trials,
        failures,
        if failures == 0 {
            "all instances separated".to_string()
        } else {
            format!("worst gap {min_gap:.3e}")
        },
    ))
}

/// Relative mismatch between an analytic and a finite-difference slope.
fn slope_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn shifted(params: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    params.iter().zip(dir).map(|(p, d)| p + h * d).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-3;

/// Directional central differences against the analytic gradients of the
/// dynamics NLL, the critic loss, the policy loss (through the tanh squash)
/// and the entropy dual; `probes` random probes each.
pub fn gradient_integrity(seed: u64, probes: usize) -> Result<PropertyResult> {
    let started = Instant::now();
    let mut rng = rng_for(seed, 8);
    let h = FD_STEP;
    let mut worst = [0.0f64; 4];
    let mut fails = [0usize; 4];
    let mut record = |k: usize, analytic: f64, numeric: f64| {
        let e = slope_error(analytic, numeric);
        worst[k] = worst[k].max(e);
        if !(e <= FD_TOL) {
            fails[k] += 1;
        }
    };
    for _ in 0..probes {
        // Dynamics member NLL.
        let (n_in, n_out, batch) = (
            rng.random_range(2..6),
            rng.random_range(2..5),
            rng.random_range(1..9),
        );
        let cfg = EnsembleConfig {
            hidden: vec![12, 12],
            head_hidden: 10,
            ..Default::default()
        };
        let mut member = GaussianMember::new(n_in, n_out, &cfg, &mut rng)?;
        let x: Vec<f64> = (0..n_in * batch)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let y: Vec<f64> = (0..n_out * batch)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let (_, grad) = member.nll_and_grad(&x, &y, batch);
        let theta = member.params();
        let dir = unit_direction(&mut rng, theta.len());
        member.set_params(&shifted(&theta, &dir, h));
        let up = member.nll(&x, &y, batch);
        member.set_params(&shifted(&theta, &dir, -h));
        let down = member.nll(&x, &y, batch);
        record(0, dot(&grad, &dir), (up - down) / (2.0 * h));

        // Critic squared error.
        let n_in = rng.random_range(2..6);
        let mut net = Mlp::new(Topology::new(n_in, &[16, 16], 1), &mut rng)?;
        let x: Vec<f64> = (0..n_in * batch)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let y: Vec<f64> = (0..batch).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grad) = critic_loss_and_grad(&net, &x, &y);
        let theta = net.params().to_vec();
        let dir = unit_direction(&mut rng, theta.len());
        net.params_mut().copy_from_slice(&shifted(&theta, &dir, h));
        let up = critic_loss_and_grad(&net, &x, &y).0;
        net.params_mut().copy_from_slice(&shifted(&theta, &dir, -h));
        let down = critic_loss_and_grad(&net, &x, &y).0;
        record(1, dot(&grad, &dir), (up - down) / (2.0 * h));

        // Policy loss, including the log-density squash correction.
        let (obs_dim, act_dim) = (rng.random_range(1..5), rng.random_range(1..4));
        let low: Vec<f64> = (0..act_dim).map(|_| rng.random_range(-2.0..0.0)).collect();
        let high: Vec<f64> = low.iter().map(|l| l + rng.random_range(0.5..3.0)).collect();
        let scaling = Scaling {
            obs_scale: vec![1.0; obs_dim],
            act_low: low,
            act_high: high,
        };
        let sac_cfg = SacConfig {
            hidden: vec![16, 16],
            ..Default::default()
        };
        let mut sac = Sac::new(sac_cfg, scaling, &mut rng)?;
        let rows: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let obs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let eps: Vec<f64> = (0..batch * act_dim)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        let alpha = rng.random_range(0.01..1.0);
        let eval = policy_loss_and_grad(&sac.policy, &sac.critic, &obs, &eps, alpha);
        let theta = sac.policy.net.params().to_vec();
        let dir = unit_direction(&mut rng, theta.len());
        sac.policy
            .net
            .params_mut()
            .copy_from_slice(&shifted(&theta, &dir, h));
        let up = policy_loss_and_grad(&sac.policy, &sac.critic, &obs, &eps, alpha).loss;
        sac.policy
            .net
            .params_mut()
            .copy_from_slice(&shifted(&theta, &dir, -h));
        let down = policy_loss_and_grad(&sac.policy, &sac.critic, &obs, &eps, alpha).loss;
        record(2, dot(&eval.grad, &dir), (up - down) / (2.0 * h));

        // Entropy dual in ln α.
        let mut coef = EntropyCoef::new(rng.random_range(0.01..2.0), -(act_dim as f64), true, 3e-4);
        let (_, g) = coef.loss_and_grad(&eval.log_probs);
        let base = coef.log_alpha;
        coef.log_alpha = base + h;
        let up = coef.loss_and_grad(&eval.log_probs).0;
        coef.log_alpha = base - h;
        let down = coef.loss_and_grad(&eval.log_probs).0;
        record(3, g, (up - down) / (2.0 * h));
    }
    let failures = fails.iter().sum();
    Ok(PropertyResult::finish(
        "gradient-integrity",
        started,
        4 * probes,
        failures,
        format!(
            "max relative error: dynamics {:.2e}, critic {:.2e}, policy {:.2e}, entropy {:.2e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

/// Declared H* against exhaustive search: tabular horizon checks and
/// step-function equality scans for CarStop and Conveyor, and a discretized
/// escape search for PointHazard.
pub fn env_horizons() -> Result<PropertyResult> {
    let started = Instant::now();
    let mut trials = 0;
    let mut failures = 0;
    let mut notes = Vec::new();
    for obstacle in [5, 12, 20] {
        for v_max in 1..=4 {
            let car = CarStop::new(CarStopParams {
                obstacle,
                v_max,
                start_speed: 0,
            })?;
            let mdp = car.tabularize(0.99)?;
            trials += 1;
            let check = crate::mdp::verify_horizon_assumption(&mdp, car.spec().horizon);
            let mut ok = check.holds;
            for s in 0..mdp.n_states() {
                let Some(state) = car.tabular_state(s) else {
                    continue;
                };
                for (a, action) in CarAction::ALL.iter().enumerate() {
                    let (next, reward, violation) = car.car_step(state, *action);
                    let t = mdp.next(s, a);
                    ok &= reward == mdp.reward(s, a) && violation == mdp.is_unsafe(t);
                    ok &= violation || car.tabular_state(t) == Some(next);
                }
            }
            if !ok {
                failures += 1;
                notes.push(format!("car-stop obstacle {obstacle} v_max {v_max}"));
            }
        }
    }
    for columns in [6, 8, 12] {
        for belt_length in 1..=3 {
            let conv = Conveyor::new(ConveyorParams {
                columns,
                belt_length,
            })?;
            let mdp = conv.tabularize(0.99)?;
            trials += 1;
            let mut ok = crate::mdp::verify_horizon_assumption(&mdp, conv.spec().horizon).holds;
            for s in 0..mdp.n_states() {
                for mv in Move::ALL {
                    let (next, reward, violation) = conv.conveyor_step(conv.cell(s), mv);
                    let t = mdp.next(s, mv.index());
                    ok &= reward == mdp.reward(s, mv.index()) && violation == mdp.is_unsafe(t);
                    ok &= conv.index(next) == t;
                }
            }
            if !ok {
                failures += 1;
                notes.push(format!("conveyor columns {columns} belt {belt_length}"));
            }
        }
    }
    let point = PointHazard::new(PointHazardParams::default())?;
    let h = point.spec().horizon;
    let v_max = point.params().v_max;
    let front = point.hazard_front();
    for i in 0..24 {
        for vx in [0.25 * v_max, 0.5 * v_max, v_max] {
            let state = [front - 0.05 - 0.06 * i as f64, 0.0, vx, 0.0];
            trials += 1;
            if point.escapes_for(&state, h) && !point.escapes_for(&state, h + 3) {
                failures += 1;
                notes.push(format!("point-hazard start {state:?}"));
            }
        }
    }
    let detail = if notes.is_empty() {
        "declared horizons hold".to_string()
    } else {
        notes.join("; ")
    };
    Ok(PropertyResult::finish(
        "env-horizons",
        started,
        trials,
        failures,
        detail,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_report_their_trials() {
        let r = bellmin_contraction(5, 20).unwrap();
        assert_eq!(r.trials, 20);
        assert!(r.passed);
        assert!(!bellmin_contraction(5, 0).unwrap().passed);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let r = gradient_integrity(1, 10).unwrap();
        assert!(r.passed, "{}", r.detail);
        assert_eq!(r.trials, 40);
    }

    #[test]
    fn declared_horizons_hold() {
        let r = env_horizons().unwrap();
        assert!(r.passed, "{}", r.detail);
    }

    #[test]
    fn slope_error_is_relative_with_a_floor() {
        assert_eq!(slope_error(2.0, 2.0), 0.0);
        assert!((slope_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-15);
        assert!(slope_error(1e-9, -1e-9) < 1e-2);
    }
}
