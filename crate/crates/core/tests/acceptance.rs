//! Acceptance criteria 1-11. Runs as a plain binary (no libtest harness) and
//! prints one PASS/FAIL line per criterion. Pass criterion numbers as
//! arguments to run a subset: `cargo test --test acceptance -- 1 7 11`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use safe_mbrl::harness::{self, RunConfig, Summary};
use safe_mbrl::properties::{self, PropertyResult};
use safe_mbrl::Result;

const SEED: u64 = 0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn config(name: &str) -> Result<RunConfig> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path)
}

fn scratch(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

fn property(r: PropertyResult) -> Outcome {
    Outcome {
        passed: r.passed,
        detail: format!("{}: {}/{} failed; {}", r.name, r.failures, r.trials, r.detail),
    }
}

fn train(root: &Path, name: &str) -> Result<Summary> {
    let cfg = config(name)?;
    Ok(harness::train(&cfg, &scratch(root, name.trim_end_matches(".json")), true)?.summary)
}

fn perfect_model(root: &Path) -> Result<Outcome> {
    let s = train(root, "carstop-oracle.json")?;
    let post: Vec<f64> = s.runs.iter().map(|r| r.post_warmup_violations as f64).collect();
    let steps_ok = s.runs.iter().all(|r| r.env_steps >= 10_000);
    Ok(Outcome {
        passed: post.iter().all(|v| *v == 0.0) && steps_ok && s.runs.len() == 5,
        detail: format!("post-warmup violations per seed {post:?}"),
    })
}

fn trend(root: &Path) -> Result<Outcome> {
    let mut passed = true;
    let mut detail = Vec::new();
    for env in ["carstop", "point"] {
        let smbpo = train(root, &format!("{env}-smbpo.json"))?;
        let mbpo = train(root, &format!("{env}-mbpo.json"))?;
        let ratio = smbpo.final_return.mean / mbpo.final_return.mean;
        let (vs, vm) = (smbpo.cumulative_violations.mean, mbpo.cumulative_violations.mean);
        let ok = ratio >= 0.8 && vs < vm;
        passed &= ok;
        detail.push(format!(
            "{env}: return {:.3} vs {:.3} (ratio {ratio:.3}), violations {vs:.1} vs {vm:.1}",
            smbpo.final_return.mean, mbpo.final_return.mean
        ));
    }
    Ok(Outcome { passed, detail: detail.join("; ") })
}

fn c_sweep(root: &Path) -> Result<Outcome> {
    let cfg = config("carstop-sweep.json")?;
    let sweep = harness::sweep_c(&cfg, &cfg.c_values, &scratch(root, "sweep"), true)?;
    let v: Vec<f64> = sweep.table.iter().map(|r| r.cumulative_violations_mean).collect();
    let labels: Vec<&str> = sweep.table.iter().map(|r| r.label.as_str()).collect();
    Ok(Outcome {
        passed: v.len() == 3 && v.windows(2).all(|w| w[1] <= w[0]),
        detail: format!("mean cumulative violations {labels:?} = {v:?}"),
    })
}

fn determinism(root: &Path) -> Result<Outcome> {
    let cfg = config("quick.json")?;
    let (a, b) = (scratch(root, "det-a"), scratch(root, "det-b"));
    harness::train(&cfg, &a, true)?;
    harness::train(&cfg, &b, true)?;
    let mut same = true;
    let mut bytes = 0;
    for &seed in &cfg.seeds {
        let x = fs::read(harness::seed_dir(&a, seed).join("metrics.csv"))?;
        let y = fs::read(harness::seed_dir(&b, seed).join("metrics.csv"))?;
        bytes += x.len();
        same &= x == y;
    }
    Ok(Outcome {
        passed: same && bytes > 0,
        detail: format!("{} seeds, {bytes} CSV bytes compared", cfg.seeds.len()),
    })
}

type Check = fn(&Path) -> Result<Outcome>;

const CRITERIA: [(u32, &str, f64, Check); 11] = [
    (1, "bellmin contraction", 60.0, |_| Ok(property(properties::bellmin_contraction(SEED, 1000)?))),
    (2, "lower bound", 120.0, |_| Ok(property(properties::lower_bound(SEED, 200)?))),
    (3, "penalty separation", 120.0, |_| Ok(property(properties::penalty_separation(SEED, 100)?))),
    (4, "theorem end-to-end", 120.0, |_| Ok(property(properties::theorem_safety(SEED, 100)?))),
    (5, "stochastic reduction", 10.0, |_| Ok(property(properties::stochastic_reduction(SEED, 100)?))),
    (6, "stochastic separation", 300.0, |_| Ok(property(properties::stochastic_separation(SEED, 100)?))),
    (7, "gradient integrity", 60.0, |_| Ok(property(properties::gradient_integrity(SEED, 50)?))),
    (8, "perfect-model CarStop", 600.0, perfect_model),
    (9, "SMBPO vs MBPO trend", 3600.0, trend),
    (10, "C-sweep trend", 3600.0, c_sweep),
    (11, "determinism", 300.0, determinism),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let root = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    for (id, name, budget, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = check(root.path()).unwrap_or_else(|e| Outcome { passed: false, detail: format!("error: {e}") });
        let secs = started.elapsed().as_secs_f64();
        let in_time = secs <= budget;
        let passed = outcome.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {} {name} ({secs:.1}s of {budget:.0}s{}) {}",
            if passed { "PASS" } else { "FAIL" },
            if in_time { "" } else { ", over budget" },
            outcome.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
