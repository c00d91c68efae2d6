//! Trains once per terminal cost and prints the return/violation table.
//!
//! `cargo run --release --example sweep_penalty -- configs/carstop-sweep.json out/`

use std::path::PathBuf;

use safe_mbrl::harness::{self, CValue, RunConfig};

fn main() -> safe_mbrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/quick.json".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/sweep_penalty".into()));
    let cfg = RunConfig::load(&config)?;
    let values = if cfg.c_values.is_empty() {
        vec![CValue::Fixed(0.0), CValue::TimesBound(1.0), CValue::TimesBound(10.0)]
    } else {
        cfg.c_values.clone()
    };
    let sweep = harness::sweep_c(&cfg, &values, &out, true)?;
    println!("{:<10} {:>10} {:>16} {:>22}", "label", "C", "final return", "cumulative violations");
    for row in &sweep.table {
        println!(
            "{:<10} {:>10.5} {:>8.3} ± {:<6.3} {:>12.2} ± {:.2}",
            row.label, row.c, row.final_return_mean, row.final_return_std, row.cumulative_violations_mean, row.cumulative_violations_std
        );
    }
    Ok(())
}
