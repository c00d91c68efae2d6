//! Bellmin planning on the Conveyor grid with a deliberately loose model.
//!
//! Each prediction set holds the true successor plus random extra cells; the
//! pessimistic fixed point lower-bounds the true values and every certified
//! action is safe.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safe_mbrl::bellmin::{certify_action, check_calibrated, solve_bellmin};
use safe_mbrl::envs::{EnvConfig, EnvName};
use safe_mbrl::generate::inflated_model;
use safe_mbrl::mdp::{
    classify_all, compute_terminal_cost, default_margin, solve_q_star, terminal_cost_bound,
    transform_terminal_cost, unsafe_action_horizon, SafetyLabel, DEFAULT_TOL,
};

fn main() -> safe_mbrl::Result<()> {
    let gamma = 0.9;
    let mdp = EnvConfig::named(EnvName::Conveyor).build()?.tabularize(gamma)?;
    let labels = classify_all(&mdp);
    let h = unsafe_action_horizon(&mdp, &labels);
    let bound = terminal_cost_bound(mdp.r_min(), mdp.r_max(), gamma, h)?;
    let c = compute_terminal_cost(mdp.r_min(), mdp.r_max(), gamma, h, default_margin(bound))?;
    let truth = solve_q_star(&transform_terminal_cost(&mdp, c)?, DEFAULT_TOL)?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for inflation in [0.0, 0.02, 0.05, 0.1] {
        let model = inflated_model(&mut rng, &mdp, inflation);
        assert!(check_calibrated(&model, &mdp));
        let pess = solve_bellmin(&model, &mdp, c, DEFAULT_TOL)?;
        let gap = pess.q.values().iter().zip(truth.values()).map(|(p, t)| t - p).fold(f64::NEG_INFINITY, f64::max);
        let mut certified = 0;
        let mut unsafe_choice = 0;
        for s in 0..mdp.n_states() {
            let cert = certify_action(&pess, s, mdp.r_min(), gamma);
            if cert.certified {
                certified += 1;
                if labels[mdp.next(s, cert.action)] != SafetyLabel::Safe {
                    unsafe_choice += 1;
                }
            }
        }
        println!(
            "inflation {inflation:.2}: max(Q* - Q_pess) {gap:8.4}, {certified:3} certified states, {unsafe_choice} unsafe certified actions"
        );
    }
    Ok(())
}
