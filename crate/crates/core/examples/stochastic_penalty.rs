//! Terminal cost for stochastic dynamics, checked by exact solves on
//! generated instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safe_mbrl::generate::stochastic_instance;
use safe_mbrl::mdp::terminal_cost_bound;
use safe_mbrl::stochastic::{stochastic_penalty, verify_stochastic_separation};

fn main() -> safe_mbrl::Result<()> {
    let (r_min, r_max, gamma, h) = (0.0, 1.0, 0.9, 3);
    println!("deterministic bound {:.6}", terminal_cost_bound(r_min, r_max, gamma, h)?);
    for (p, q) in [(1e-9, 1.0), (0.05, 0.95), (0.1, 0.9), (0.2, 0.8)] {
        match stochastic_penalty(r_min, r_max, gamma, h, p, q, 1e-6) {
            Ok(params) => println!("p {p:<5} q {q:<5} C {:.6}", params.c),
            Err(e) => println!("p {p:<5} q {q:<5} {e}"),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut held = 0;
    for _ in 0..20 {
        let inst = stochastic_instance(&mut rng, 0.9);
        if verify_stochastic_separation(&inst.mdp, inst.p, inst.q, inst.horizon, inst.penalty.c)? {
            held += 1;
        }
    }
    println!("separation held on {held}/20 generated instances");
    Ok(())
}
