//! Run configs, multi-seed training, terminal-cost sweeps, summaries and
//! the verification suites behind the command-line verbs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{
    final_return, Agent, AgentConfig, Algorithm, EpisodeRow, ModelConfig, RunSummary,
};
use crate::envs::{EnvConfig, EnvName, Task};
use crate::error::{Error, Result};
use crate::mdp::terminal_cost_bound;
use crate::properties::{self, PropertyResult};
use crate::sac::SacConfig;

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Values used by `sweep-c` when none are given on the command line.
    #[serde(default)]
    pub c_values: Vec<CValue>,
    #[serde(default)]
    pub agent: AgentConfig,
}

impl RunConfig {
    pub fn new(env: EnvConfig, agent: AgentConfig) -> Self {
        Self {
            env,
            seeds: default_seeds(),
            c_values: Vec::new(),
            agent,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.agent.validate()?;
        self.env.build().map(|_| ())
    }
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }

    fn close_to(&self, other: &Stat) -> bool {
        let near =
            |a: f64, b: f64| a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        near(self.mean, other.mean) && near(self.std, other.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub env: EnvName,
    pub algorithm: Algorithm,
    pub warmup_steps: usize,
    pub seeds: Vec<u64>,
    pub final_return: Stat,
    pub cumulative_violations: Stat,
    pub warmup_violations: Stat,
    pub post_warmup_violations: Stat,
    pub final_c: Stat,
    pub episodes: Stat,
    pub env_steps: Stat,
    pub runs: Vec<RunSummary>,
}

pub fn summarize(
    env: EnvName,
    algorithm: Algorithm,
    warmup_steps: usize,
    runs: Vec<RunSummary>,
) -> Summary {
    let stat = |f: &dyn Fn(&RunSummary) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
    Summary {
        env,
        algorithm,
        warmup_steps,
        seeds: runs.iter().map(|r| r.seed).collect(),
        final_return: stat(&|r| r.final_return),
        cumulative_violations: stat(&|r| r.cumulative_violations as f64),
        warmup_violations: stat(&|r| r.warmup_violations as f64),
        post_warmup_violations: stat(&|r| r.post_warmup_violations as f64),
        final_c: stat(&|r| r.final_c),
        episodes: stat(&|r| r.episodes as f64),
        env_steps: stat(&|r| r.env_steps as f64),
        runs,
    }
}

/// Creates `dir`, refusing an existing one unless `force`.
pub fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        if dir.is_dir() {
            fs::remove_dir_all(dir)?;
        } else {
            fs::remove_file(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Trains one seed into `dir`: `metrics.csv` (flushed per row) plus the
/// checkpoint layout.
pub fn train_seed(
    task: Arc<dyn Task>,
    cfg: &AgentConfig,
    seed: u64,
    dir: &Path,
) -> Result<(RunSummary, Vec<EpisodeRow>)> {
    fs::create_dir_all(dir)?;
    let mut agent = Agent::new(task, cfg.clone(), seed)?;
    let mut writer = csv::Writer::from_path(dir.join("metrics.csv"))?;
    let mut rows = Vec::new();
    let summary = agent.run(|row| {
        writer.serialize(row)?;
        writer.flush()?;
        rows.push(row.clone());
        Ok(())
    })?;
    agent.save(dir)?;
    Ok((summary, rows))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub summary: Summary,
    /// Per-seed metrics rows, in seed order.
    pub metrics: Vec<Vec<EpisodeRow>>,
}

/// Runs every seed sequentially, then writes `summary.json` and the
/// resolved `config.json`.
pub fn train(cfg: &RunConfig, out: &Path, force: bool) -> Result<TrainOutput> {
    cfg.validate()?;
    prepare_output(out, force)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let task = cfg.env.build()?;
    let mut runs = Vec::new();
    let mut metrics = Vec::new();
    for &seed in &cfg.seeds {
        let (run, rows) = train_seed(task.clone(), &cfg.agent, seed, &seed_dir(out, seed))?;
        runs.push(run);
        metrics.push(rows);
    }
    let summary = summarize(
        cfg.env.name,
        cfg.agent.algorithm,
        cfg.agent.warmup_steps,
        runs,
    );
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(TrainOutput { summary, metrics })
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Rebuilds one seed's summary from its metrics rows alone.
pub fn run_summary_from_rows(seed: u64, warmup_steps: usize, rows: &[EpisodeRow]) -> RunSummary {
    let last = rows.last();
    let cumulative = last.map_or(0, |r| r.cumulative_violations);
    // The episode that crosses the warmup budget is the last random one.
    let warmup = if warmup_steps == 0 {
        0
    } else {
        rows.iter()
            .find(|r| r.env_steps >= warmup_steps)
            .or(last)
            .map_or(0, |r| r.cumulative_violations)
    };
    RunSummary {
        seed,
        episodes: rows.len(),
        env_steps: last.map_or(0, |r| r.env_steps),
        final_return: final_return(rows),
        cumulative_violations: cumulative,
        warmup_violations: warmup,
        post_warmup_violations: cumulative - warmup,
        final_c: last.map_or(0.0, |r| r.current_c),
    }
}

/// Recomputes `summary.json` in `out` from the per-seed CSVs.
pub fn recompute_summary(out: &Path) -> Result<Summary> {
    let stored: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json"))?)?;
    let runs = stored
        .seeds
        .iter()
        .map(|&seed| {
            let rows = read_metrics(&seed_dir(out, seed).join("metrics.csv"))?;
            Ok(run_summary_from_rows(seed, stored.warmup_steps, &rows))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(
        stored.env,
        stored.algorithm,
        stored.warmup_steps,
        runs,
    ))
}

/// Checks that `summary.json` agrees with what the CSVs imply.
pub fn crosscheck_summary(out: &Path) -> Result<PropertyResult> {
    let started = std::time::Instant::now();
    let stored: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json"))?)?;
    let fresh = recompute_summary(out)?;
    let pairs = [
        ("final_return", stored.final_return, fresh.final_return),
        (
            "cumulative_violations",
            stored.cumulative_violations,
            fresh.cumulative_violations,
        ),
        (
            "warmup_violations",
            stored.warmup_violations,
            fresh.warmup_violations,
        ),
        (
            "post_warmup_violations",
            stored.post_warmup_violations,
            fresh.post_warmup_violations,
        ),
        ("final_c", stored.final_c, fresh.final_c),
        ("episodes", stored.episodes, fresh.episodes),
        ("env_steps", stored.env_steps, fresh.env_steps),
    ];
    let mismatched: Vec<&str> = pairs
        .iter()
        .filter(|(_, a, b)| !a.close_to(b))
        .map(|(n, _, _)| *n)
        .collect();
    let runs_match = stored.runs == fresh.runs;
    let failures = mismatched.len() + usize::from(!runs_match);
    let detail = if failures == 0 {
        format!(
            "{} statistics over {} seeds agree",
            pairs.len(),
            stored.seeds.len()
        )
    } else {
        format!("mismatched: {mismatched:?}, per-seed runs match: {runs_match}")
    };
    Ok(PropertyResult {
        name: "summary-crosscheck".into(),
        passed: failures == 0,
        trials: pairs.len() + 1,
        failures,
        detail,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

/// A terminal cost for `sweep-c`: a literal, or a multiple of the bound at
/// the environment's declared reward range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CValue {
    TimesBound(f64),
    Fixed(f64),
}

impl FromStr for CValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "bound" {
            return Ok(CValue::TimesBound(1.0));
        }
        if let Some(k) = s.strip_suffix("xbound") {
            let k: f64 = k
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad C multiple {s:?}")))?;
            return Ok(CValue::TimesBound(k));
        }
        let c: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad C value {s:?}")))?;
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!("C must be finite, got {s}")));
        }
        Ok(CValue::Fixed(c))
    }
}

impl TryFrom<String> for CValue {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CValue> for String {
    fn from(c: CValue) -> String {
        c.to_string()
    }
}

impl fmt::Display for CValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CValue::TimesBound(k) if *k == 1.0 => write!(f, "bound"),
            CValue::TimesBound(k) => write!(f, "{k}xbound"),
            CValue::Fixed(c) => write!(f, "{c}"),
        }
    }
}

impl CValue {
    pub fn resolve(&self, task: &dyn Task, gamma: f64, horizon: u32) -> Result<f64> {
        match *self {
            CValue::Fixed(c) => Ok(c),
            CValue::TimesBound(k) => {
                let spec = task.spec();
                Ok(k * terminal_cost_bound(spec.r_min, spec.r_max, gamma, horizon)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    #[serde(rename = "C")]
    pub c: f64,
    pub final_return_mean: f64,
    pub final_return_std: f64,
    pub cumulative_violations_mean: f64,
    pub cumulative_violations_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub label: String,
    #[serde(rename = "C")]
    pub c: f64,
    pub episode: usize,
    pub mean_return: f64,
    pub mean_cumulative_violations: f64,
}

/// Seed-averaged curves over the episode indices every seed reached.
pub fn mean_curve(label: &str, c: f64, metrics: &[Vec<EpisodeRow>]) -> Vec<CurvePoint> {
    let len = metrics.iter().map(Vec::len).min().unwrap_or(0);
    let n = metrics.len() as f64;
    (0..len)
        .map(|i| CurvePoint {
            label: label.to_string(),
            c,
            episode: i + 1,
            mean_return: metrics.iter().map(|m| m[i].ret).sum::<f64>() / n,
            mean_cumulative_violations: metrics
                .iter()
                .map(|m| m[i].cumulative_violations as f64)
                .sum::<f64>()
                / n,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: Vec<SweepRow>,
    pub curves: Vec<CurvePoint>,
    pub summaries: Vec<Summary>,
}

/// One fixed-C training run per value under `out/c-<label>/`, plus
/// `sweep.csv` (one row per C) and `sweep_curves.csv`.
pub fn sweep_c(cfg: &RunConfig, values: &[CValue], out: &Path, force: bool) -> Result<SweepOutput> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep-c needs at least one C value".into(),
        ));
    }
    cfg.validate()?;
    prepare_output(out, force)?;
    let task = cfg.env.build()?;
    let mut table = Vec::new();
    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    for value in values {
        let c = value.resolve(task.as_ref(), cfg.agent.gamma, cfg.agent.horizon)?;
        let label = value.to_string();
        let mut run_cfg = cfg.clone();
        run_cfg.agent.algorithm = Algorithm::FixedC(c);
        let result = train(&run_cfg, &out.join(format!("c-{label}")), false)?;
        let s = &result.summary;
        table.push(SweepRow {
            label: label.clone(),
            c,
            final_return_mean: s.final_return.mean,
            final_return_std: s.final_return.std,
            cumulative_violations_mean: s.cumulative_violations.mean,
            cumulative_violations_std: s.cumulative_violations.std,
        });
        curves.extend(mean_curve(&label, c, &result.metrics));
        summaries.push(result.summary);
    }
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for row in &table {
        w.serialize(row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("sweep_curves.csv"))?;
    for p in &curves {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(SweepOutput {
        table,
        curves,
        summaries,
    })
}

pub const SUITES: [&str; 12] = [
    "contraction",
    "lower-bound",
    "penalty-separation",
    "greedy-safety",
    "theorem-safety",
    "certified-action",
    "stochastic-reduction",
    "stochastic-separation",
    "gradients",
    "horizons",
    "summary-crosscheck",
    "all",
];

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub results: Vec<PropertyResult>,
}

/// A short oracle-model CarStop run used when no run directory is given.
fn crosscheck_fixture(dir: &Path) -> Result<()> {
    let agent = AgentConfig {
        total_env_steps: 600,
        warmup_steps: 200,
        n_rollout: 4,
        n_actor: 1,
        model: ModelConfig::Oracle,
        sac: SacConfig {
            hidden: vec![16],
            batch_size: 32,
            ..Default::default()
        },
        ..Default::default()
    };
    let cfg = RunConfig {
        seeds: vec![0, 1, 2],
        ..RunConfig::new(EnvConfig::named(EnvName::CarStop), agent)
    };
    train(&cfg, dir, true).map(|_| ())
}

fn run_one(name: &str, seed: u64, run_dir: Option<&Path>) -> Result<Vec<PropertyResult>> {
    Ok(vec![match name {
        "contraction" => properties::bellmin_contraction(seed, 1000)?,
        "lower-bound" => properties::lower_bound(seed, 200)?,
        "penalty-separation" => properties::penalty_separation(seed, 100)?,
        "greedy-safety" => properties::greedy_safety(seed, 100)?,
        "theorem-safety" => properties::theorem_safety(seed, 100)?,
        "certified-action" => properties::certified_action_safety(seed, 100)?,
        "stochastic-reduction" => properties::stochastic_reduction(seed, 100)?,
        "stochastic-separation" => properties::stochastic_separation(seed, 100)?,
        "gradients" => properties::gradient_integrity(seed, 50)?,
        "horizons" => properties::env_horizons()?,
        "summary-crosscheck" => match run_dir {
            Some(dir) => crosscheck_summary(dir)?,
            None => {
                let dir = std::env::temp_dir()
                    .join(format!("safe-mbrl-crosscheck-{}", std::process::id()));
                crosscheck_fixture(&dir)?;
                let result = crosscheck_summary(&dir);
                fs::remove_dir_all(&dir)?;
                result?
            }
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown suite {other:?}; expected one of {SUITES:?}"
            )))
        }
    }])
}

/// Runs a named suite (or `all`). `run_dir` points the summary cross-check
/// at an existing `train` output.
pub fn verify(suite: &str, seed: u64, run_dir: Option<&Path>) -> Result<VerifyReport> {
    let results = if suite == "all" {
        let mut all = Vec::new();
        for name in SUITES.iter().filter(|s| **s != "all") {
            all.extend(run_one(name, seed, run_dir)?);
        }
        all
    } else {
        run_one(suite, seed, run_dir)?
    };
    Ok(VerifyReport {
        suite: suite.to_string(),
        seed,
        passed: results.iter().all(|r| r.passed),
        results,
    })
}

/// The environment's exact tabular form as JSON.
pub fn export_mdp(env: &EnvConfig, gamma: f64) -> Result<String> {
    let task = env.build()?;
    task.tabularize(gamma)?.to_json()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointInfo {
    pub dir: PathBuf,
    pub schedule: crate::agent::PenaltySchedule,
    pub bound: Option<f64>,
    pub model: String,
    pub critic_params: usize,
    pub policy_params: usize,
    pub alpha: f64,
}

fn inspect_one(dir: &Path) -> Result<CheckpointInfo> {
    let schedule = crate::agent::load_schedule(dir)?;
    let model = if dir.join("models/ensemble.json").exists() {
        "ensemble"
    } else {
        "oracle"
    }
    .to_string();
    let read = |rel: &str| {
        fs::read_to_string(dir.join(rel)).map_err(|e| Error::Checkpoint(format!("{rel}: {e}")))
    };
    let critic =
        crate::sac::Critic::from_json(&read("critic/critic.json")?, Default::default(), 1e-3)?;
    let policy: crate::sac::Policy = serde_json::from_str(&read("policy/policy.json")?)?;
    let entropy: crate::sac::EntropyCoef = serde_json::from_str(&read("policy/entropy.json")?)?;
    Ok(CheckpointInfo {
        dir: dir.to_path_buf(),
        bound: schedule.bound(),
        schedule,
        model,
        critic_params: critic.q1.n_params() + critic.q2.n_params(),
        policy_params: policy.net.n_params(),
        alpha: entropy.alpha(),
    })
}

/// Reads a seed checkpoint, or every `seed-*` checkpoint under a run root.
pub fn inspect(dir: &Path) -> Result<Vec<CheckpointInfo>> {
    if dir.join("schedule.json").exists() {
        return Ok(vec![inspect_one(dir)?]);
    }
    let mut seeds: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("schedule.json").exists())
        .collect();
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no checkpoint",
            dir.display()
        )));
    }
    seeds.sort();
    seeds.iter().map(|p| inspect_one(p)).collect()
}
