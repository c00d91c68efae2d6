//! Tabularizes the exact environments and summarizes their safety structure.

use safe_mbrl::envs::{EnvConfig, EnvName};
use safe_mbrl::mdp::{classify_all, minimal_horizon, unsafe_action_horizon, verify_horizon_assumption, SafetyLabel};

fn main() -> safe_mbrl::Result<()> {
    for name in [EnvName::CarStop, EnvName::Conveyor] {
        let task = EnvConfig::named(name).build()?;
        let mdp = task.tabularize(0.99)?;
        let labels = classify_all(&mdp);
        let count = |f: fn(&SafetyLabel) -> bool| labels.iter().filter(|l| f(l)).count();
        let declared = task.spec().horizon;
        println!(
            "{}: {} states x {} actions; safe {}, irrecoverable {}, violation {}",
            task.spec().name,
            mdp.n_states(),
            mdp.n_actions(),
            count(|l| *l == SafetyLabel::Safe),
            count(|l| matches!(l, SafetyLabel::Irrecoverable { .. })),
            count(|l| *l == SafetyLabel::Violation),
        );
        println!(
            "  declared H* {declared}, minimal state horizon {}, unsafe-action horizon {}, assumption holds: {}",
            minimal_horizon(&labels),
            unsafe_action_horizon(&mdp, &labels),
            verify_horizon_assumption(&mdp, declared).holds
        );
    }
    Ok(())
}
