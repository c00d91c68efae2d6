//! Trains the safe agent from a run config and prints per-seed results.
//!
//! `cargo run --release --example train_agent -- configs/carstop-oracle.json out/`

use std::path::PathBuf;

use safe_mbrl::harness::{self, RunConfig};

fn main() -> safe_mbrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/quick.json".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/train_agent".into()));
    let cfg = RunConfig::load(&config)?;
    let result = harness::train(&cfg, &out, true)?;
    for run in &result.summary.runs {
        println!(
            "seed {}: {} episodes, final return {:.3}, violations {} ({} after warmup), C {:.5}",
            run.seed, run.episodes, run.final_return, run.cumulative_violations, run.post_warmup_violations, run.final_c
        );
    }
    let s = &result.summary;
    println!(
        "mean final return {:.3} ± {:.3}; wrote {}",
        s.final_return.mean,
        s.final_return.std,
        out.display()
    );
    Ok(())
}
