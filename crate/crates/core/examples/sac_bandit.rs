//! Soft actor-critic on a one-step continuous bandit: reward
//! `1 − (a − 0.5·s)²` for context `s ∈ [−1, 1]`. The learned mean action
//! should approach `0.5·s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_mbrl::buffer::{ReplayBuffer, Transition};
use safe_mbrl::sac::{Sac, SacConfig, Scaling};

fn main() -> safe_mbrl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scaling = Scaling { obs_scale: vec![1.0], act_low: vec![-1.0], act_high: vec![1.0] };
    let config = SacConfig { hidden: vec![32, 32], batch_size: 64, critic_lr: 1e-3, policy_lr: 1e-3, ..Default::default() };
    let mut sac = Sac::new(config, scaling, &mut rng)?;
    let mut buffer = ReplayBuffer::new(10_000)?;
    // Tiny discount: the next state barely matters.
    let gamma = 1e-3;
    for step in 1..=3000 {
        let s = rng.random_range(-1.0..1.0);
        let (a, _) = sac.policy.act(&[s], &mut rng);
        let r = 1.0 - (a[0] - 0.5 * s).powi(2);
        buffer.push(Transition::new(vec![s], a, r, vec![0.0], false));
        if buffer.len() >= 64 {
            let batch: Vec<&Transition> = (0..64).map(|_| buffer.sample(&mut rng)).collect();
            let stats = sac.update(&batch, 0.0, gamma, &mut rng)?;
            if step % 500 == 0 {
                let err: f64 = [-0.8, -0.4, 0.0, 0.4, 0.8]
                    .iter()
                    .map(|s| (sac.policy.mean_action(&[*s])[0] - 0.5 * s).abs())
                    .fold(0.0, f64::max);
                println!(
                    "step {step}: critic loss {:.5}, alpha {:.4}, max |mean action - 0.5 s| {err:.3}",
                    stats.critic_loss, stats.alpha
                );
            }
        }
    }
    Ok(())
}
