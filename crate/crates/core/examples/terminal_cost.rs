//! Exact planning on tabular CarStop with and without the terminal cost.
//!
//! With C = 0 the reward-greedy car drives into the obstacle; with C from the
//! penalty bound it stops short and keeps its reward.

use safe_mbrl::envs::{EnvConfig, EnvName};
use safe_mbrl::mdp::{
    classify_all, compute_terminal_cost, default_margin, greedy_rollout, solve_q_star,
    terminal_cost_bound, transform_terminal_cost, unsafe_action_horizon, DEFAULT_TOL,
};

fn main() -> safe_mbrl::Result<()> {
    let gamma = 0.95;
    let task = EnvConfig::named(EnvName::CarStop).build()?;
    let mdp = task.tabularize(gamma)?;
    let labels = classify_all(&mdp);
    let h = unsafe_action_horizon(&mdp, &labels);
    let bound = terminal_cost_bound(mdp.r_min(), mdp.r_max(), gamma, h)?;
    let c = compute_terminal_cost(mdp.r_min(), mdp.r_max(), gamma, h, default_margin(bound))?;
    println!("{} states, H* = {h}, bound {bound:.6}, C = {c:.6}", mdp.n_states());

    for (name, cost) in [("C = 0", 0.0), ("C from bound", c)] {
        let q = solve_q_star(&transform_terminal_cost(&mdp, cost)?, DEFAULT_TOL)?;
        let path = greedy_rollout(&mdp, &q, 0, 100);
        let hit = path.iter().position(|&s| mdp.is_unsafe(s));
        let reward: f64 = path.windows(2).map(|w| {
            let a = q.argmax(w[0]);
            if mdp.is_unsafe(w[0]) { 0.0 } else { mdp.reward(w[0], a) }
        }).sum();
        match hit {
            Some(t) => println!("{name:>13}: collides at step {t}, reward before impact {reward:.3}"),
            None => println!("{name:>13}: never collides in 100 steps, reward {reward:.3}"),
        }
    }
    Ok(())
}
