//! Fits the Gaussian dynamics ensemble to random PointHazard transitions and
//! reports held-out NLL and one-sigma calibration as training proceeds.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safe_mbrl::agent::{collect_episode, random_action};
use safe_mbrl::buffer::{ReplayBuffer, Transition};
use safe_mbrl::dynamics::{EnsembleConfig, EnsembleDynamics};
use safe_mbrl::envs::{ActionSpace, Env, EnvConfig, EnvName};

fn main() -> safe_mbrl::Result<()> {
    let task = EnvConfig::named(EnvName::PointHazard).build()?;
    let spec = task.spec().clone();
    let ActionSpace::Box { low, high } = spec.action_space.clone() else {
        unreachable!("point-hazard has a box action space")
    };
    let mut env = Env::new(Arc::clone(&task))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut train = ReplayBuffer::new(20_000)?;
    let mut test = ReplayBuffer::new(2_000)?;
    while train.len() < 4_000 {
        collect_episode(&mut env, &mut train, &mut rng, |_, r| random_action(&low, &high, r))?;
    }
    while test.len() < 1_000 {
        collect_episode(&mut env, &mut test, &mut rng, |_, r| random_action(&low, &high, r))?;
    }
    let held_out: Vec<Transition> = test.iter().cloned().collect();

    let config = EnsembleConfig { hidden: vec![32, 32], head_hidden: 32, ..Default::default() };
    let mut model = EnsembleDynamics::new(spec.obs_dim, low.len(), config, 0)?;
    for round in 1..=5 {
        let report = model.train_epoch(&train, 200, model.config().lr)?;
        let nll = model.evaluate_nll(&held_out);
        println!(
            "round {round}: train NLL {:8.4}, held-out NLL per member {:?}, 1-sigma calibration {:.3}",
            report.mean_nll(),
            nll.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            model.calibration_rate(&held_out)
        );
    }
    Ok(())
}
