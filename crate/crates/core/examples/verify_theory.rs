//! Runs the randomized planning property checks and prints a summary line each.

use safe_mbrl::properties;

fn main() -> safe_mbrl::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let results = [
        properties::bellmin_contraction(seed, 1000)?,
        properties::lower_bound(seed, 200)?,
        properties::penalty_separation(seed, 100)?,
        properties::greedy_safety(seed, 100)?,
        properties::theorem_safety(seed, 100)?,
        properties::certified_action_safety(seed, 100)?,
        properties::stochastic_reduction(seed, 100)?,
        properties::stochastic_separation(seed, 100)?,
    ];
    for r in &results {
        println!(
            "{:<24} {} trials={:<5} failures={:<4} {:.2}s  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.trials,
            r.failures,
            r.elapsed_secs,
            r.detail
        );
    }
    Ok(())
}
