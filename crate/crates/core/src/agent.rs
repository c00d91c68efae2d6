//! The training loop: real data collection, model refits, the penalty
//! schedule, branched model rollouts and interleaved actor-critic updates.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{sample_mixed, ReplayBuffer, Successor, Transition};
use crate::dynamics::{
    EnsembleConfig, EnsembleDynamics, OracleDynamics, PredictionMode, TransitionModel,
};
use crate::envs::{ActionSpace, Env, Task};
use crate::error::{Error, Result};
use crate::mdp::{compute_terminal_cost, default_margin, terminal_cost_bound};
use crate::sac::{Policy, Sac, SacConfig, Scaling, TargetMode, UpdateStats};

/// How the terminal cost is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// C from the running reward extrema.
    #[default]
    Smbpo,
    /// No penalty (C = 0).
    Mbpo,
    FixedC(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Ensemble(EnsembleConfig),
    /// The true dynamics, as a one-member calibrated model.
    Oracle,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Ensemble(EnsembleConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Refit {
    #[default]
    PerEpisode,
    EverySteps(usize),
}

/// How real-environment actions are drawn from the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnvAction {
    #[default]
    Sample,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    /// Model rollout length, also used as H in the penalty bound.
    pub horizon: u32,
    pub total_env_steps: usize,
    /// Random-policy steps before the first model fit.
    pub warmup_steps: usize,
    pub n_rollout: usize,
    pub n_actor: usize,
    pub rollout_mode: PredictionMode,
    pub real_fraction: f64,
    pub real_capacity: usize,
    pub model_capacity: usize,
    pub refit: Refit,
    pub env_action: EnvAction,
    /// Defaults to `1e-6·max(|bound|, 1)`.
    pub margin: Option<f64>,
    pub model: ModelConfig,
    pub sac: SacConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Smbpo,
            gamma: 0.99,
            horizon: 10,
            total_env_steps: 10_000,
            warmup_steps: 1000,
            n_rollout: 20,
            n_actor: 10,
            rollout_mode: PredictionMode::Sample,
            real_fraction: 0.1,
            real_capacity: 100_000,
            model_capacity: 100_000,
            refit: Refit::PerEpisode,
            env_action: EnvAction::Sample,
            margin: None,
            model: ModelConfig::default(),
            sac: SacConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.real_fraction) {
            return Err(Error::Config(format!(
                "real_fraction must lie in [0, 1], got {}",
                self.real_fraction
            )));
        }
        if self.real_capacity == 0 || self.model_capacity == 0 {
            return Err(Error::Config("buffer capacities must be positive".into()));
        }
        if let Refit::EverySteps(0) = self.refit {
            return Err(Error::Config("refit interval must be positive".into()));
        }
        if let Some(m) = self.margin {
            if !(m > 0.0) {
                return Err(Error::Config(format!("margin must be positive, got {m}")));
            }
        }
        if let Algorithm::FixedC(c) = self.algorithm {
            if !c.is_finite() {
                return Err(Error::Config("fixed C must be finite".into()));
            }
        }
        if let ModelConfig::Ensemble(e) = &self.model {
            e.validate()?;
        }
        self.sac.validate()
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            horizon: self.horizon,
            n_rollout: self.n_rollout,
            mode: self.rollout_mode,
            keep_alternatives: self.sac.target_mode == TargetMode::Min,
        }
    }
}

/// Terminal cost from the running reward extrema, or a fixed override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub gamma: f64,
    pub horizon: u32,
    pub margin: Option<f64>,
    pub fixed: Option<f64>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub c: f64,
}

impl PenaltySchedule {
    pub fn new(gamma: f64, horizon: u32, margin: Option<f64>, fixed: Option<f64>) -> Self {
        Self {
            gamma,
            horizon,
            margin,
            fixed,
            r_min: None,
            r_max: None,
            c: fixed.unwrap_or(0.0),
        }
    }

    pub fn for_algorithm(
        algorithm: Algorithm,
        gamma: f64,
        horizon: u32,
        margin: Option<f64>,
    ) -> Self {
        let fixed = match algorithm {
            Algorithm::Smbpo => None,
            Algorithm::Mbpo => Some(0.0),
            Algorithm::FixedC(c) => Some(c),
        };
        Self::new(gamma, horizon, margin, fixed)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Bound at the current empirical extrema.
    pub fn bound(&self) -> Option<f64> {
        let (lo, hi) = (self.r_min?, self.r_max?);
        terminal_cost_bound(lo, hi, self.gamma, self.horizon).ok()
    }

    /// Folds observed real rewards into the extrema and recomputes C.
    pub fn update(&mut self, rewards: impl IntoIterator<Item = f64>) -> Result<f64> {
        for r in rewards {
            if !r.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite reward {r}")));
            }
            self.r_min = Some(self.r_min.map_or(r, |m| m.min(r)));
            self.r_max = Some(self.r_max.map_or(r, |m| m.max(r)));
        }
        if let Some(c) = self.fixed {
            self.c = c;
        } else if let (Some(lo), Some(hi)) = (self.r_min, self.r_max) {
            let margin = match self.margin {
                Some(m) => m,
                None => default_margin(terminal_cost_bound(lo, hi, self.gamma, self.horizon)?),
            };
            self.c = compute_terminal_cost(lo, hi, self.gamma, self.horizon, margin)?;
        }
        Ok(self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub horizon: u32,
    pub n_rollout: usize,
    pub mode: PredictionMode,
    /// Store every member's mean prediction with each sample.
    pub keep_alternatives: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RolloutStats {
    pub transitions: usize,
    pub violations: usize,
}

/// Branches `n_rollout` rollouts of up to `horizon` steps from states
/// drawn uniformly from `real`. A branch stops at the first predicted
/// unsafe state, which is stored flagged.
pub fn model_rollouts(
    real: &ReplayBuffer,
    synthetic: &mut ReplayBuffer,
    model: &dyn TransitionModel,
    task: &dyn Task,
    policy: &Policy,
    cfg: &RolloutConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutStats> {
    if real.is_empty() {
        return Err(Error::InvalidArgument(
            "model rollouts need real data to start from".into(),
        ));
    }
    let mut states: Vec<Vec<f64>> = (0..cfg.n_rollout)
        .map(|_| real.sample(rng).obs.clone())
        .collect();
    let mut stats = RolloutStats::default();
    let d = policy.act_dim();
    for _ in 0..cfg.horizon {
        if states.is_empty() {
            break;
        }
        let sample = policy.sample(states.iter().map(|s| s.as_slice()), rng);
        let actions: Vec<Vec<f64>> = sample.actions.chunks(d).map(|a| a.to_vec()).collect();
        let preds = model.step_batch(&states, &actions, rng, cfg.mode);
        let mut live = Vec::with_capacity(states.len());
        for ((state, action), p) in states.into_iter().zip(actions).zip(preds) {
            if !p.reward.is_finite() || p.next.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let unsafe_next = task.is_unsafe(&p.next);
            let mut t = Transition::new(state, action, p.reward, p.next, unsafe_next);
            if cfg.keep_alternatives {
                t.alternatives = model
                    .predict_set(&t.obs, &t.action)
                    .into_iter()
                    .map(|q| Successor {
                        unsafe_next: task.is_unsafe(&q.next),
                        next_obs: q.next,
                        reward: q.reward,
                    })
                    .collect();
            }
            stats.transitions += 1;
            if unsafe_next {
                stats.violations += 1;
            } else {
                live.push(t.next_obs.clone());
            }
            synthetic.push(t);
        }
        states = live;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub length: usize,
    /// Undiscounted.
    pub ret: f64,
    pub violation: bool,
    pub reward_min: f64,
    pub reward_max: f64,
}

/// Runs one episode from a reset, appending every step to `buffer`.
pub fn collect_episode(
    env: &mut Env,
    buffer: &mut ReplayBuffer,
    rng: &mut ChaCha8Rng,
    mut actor: impl FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>,
) -> Result<EpisodeStats> {
    let mut obs = env.reset(rng);
    let mut stats = EpisodeStats {
        length: 0,
        ret: 0.0,
        violation: false,
        reward_min: f64::INFINITY,
        reward_max: f64::NEG_INFINITY,
    };
    loop {
        let action = actor(&obs, rng);
        let step = env.step(&action)?;
        stats.length += 1;
        stats.ret += step.reward;
        stats.reward_min = stats.reward_min.min(step.reward);
        stats.reward_max = stats.reward_max.max(step.reward);
        stats.violation |= step.violation;
        buffer.push(Transition::new(
            obs,
            action,
            step.reward,
            step.next.clone(),
            step.violation,
        ));
        if step.done() {
            return Ok(stats);
        }
        obs = step.next;
    }
}

/// Uniform random action in a box.
pub fn random_action(low: &[f64], high: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    low.iter()
        .zip(high)
        .map(|(l, h)| rng.random_range(*l..=*h))
        .collect()
}

/// One row of the per-episode metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub env_steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub cumulative_violations: usize,
    #[serde(rename = "current_C")]
    pub current_c: f64,
    pub model_nll: Option<f64>,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
}

/// End-of-run figures for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub episodes: usize,
    pub env_steps: usize,
    /// Mean return of the last [`FINAL_EPISODES`] episodes.
    pub final_return: f64,
    pub cumulative_violations: usize,
    pub warmup_violations: usize,
    pub post_warmup_violations: usize,
    pub final_c: f64,
}

pub const FINAL_EPISODES: usize = 5;

/// Mean return over the trailing [`FINAL_EPISODES`] rows.
pub fn final_return(rows: &[EpisodeRow]) -> f64 {
    let tail = &rows[rows.len().saturating_sub(FINAL_EPISODES)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|r| r.ret).sum::<f64>() / tail.len() as f64
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// All training state for one seed.
pub struct Agent {
    config: AgentConfig,
    seed: u64,
    env: Env,
    model: Box<dyn TransitionModel>,
    sac: Sac,
    real: ReplayBuffer,
    synthetic: ReplayBuffer,
    schedule: PenaltySchedule,
    env_rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    episodes: usize,
    env_steps: usize,
    violations: usize,
    warmup_violations: usize,
    last_refit: Option<usize>,
    last_nll: Option<f64>,
}

impl Agent {
    pub fn new(task: Arc<dyn Task>, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = task.spec().clone();
        let (low, high) = match &spec.action_space {
            ActionSpace::Box { low, high } => (low.clone(), high.clone()),
            ActionSpace::Discrete { .. } => {
                return Err(Error::Config(format!(
                    "{} has a discrete action space; the agent needs a box",
                    spec.name
                )))
            }
        };
        let env = Env::new(task.clone())?;
        let scaling = Scaling {
            obs_scale: spec.obs_scale.clone(),
            act_low: low.clone(),
            act_high: high,
        };
        let sac = Sac::new(config.sac.clone(), scaling, &mut stream(seed, 100))?;
        let model: Box<dyn TransitionModel> = match &config.model {
            ModelConfig::Oracle => Box::new(OracleDynamics::new(task)),
            ModelConfig::Ensemble(e) => Box::new(EnsembleDynamics::new(
                spec.obs_dim,
                low.len(),
                e.clone(),
                seed ^ 0x9e37_79b9_7f4a_7c15,
            )?),
        };
        let schedule = PenaltySchedule::for_algorithm(
            config.algorithm,
            config.gamma,
            config.horizon,
            config.margin,
        );
        Ok(Self {
            real: ReplayBuffer::new(config.real_capacity)?,
            synthetic: ReplayBuffer::new(config.model_capacity)?,
            config,
            seed,
            env,
            model,
            sac,
            schedule,
            env_rng: stream(seed, 101),
            rollout_rng: stream(seed, 102),
            update_rng: stream(seed, 103),
            episodes: 0,
            env_steps: 0,
            violations: 0,
            warmup_violations: 0,
            last_refit: None,
            last_nll: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn sac(&self) -> &Sac {
        &self.sac
    }

    pub fn schedule(&self) -> &PenaltySchedule {
        &self.schedule
    }

    pub fn real_buffer(&self) -> &ReplayBuffer {
        &self.real
    }

    pub fn model_buffer(&self) -> &ReplayBuffer {
        &self.synthetic
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn violations(&self) -> usize {
        self.violations
    }

    /// One real episode: random actions during warmup, the policy after.
    pub fn collect(&mut self) -> Result<EpisodeStats> {
        let warm = self.env_steps < self.config.warmup_steps;
        let (low, high) = match &self.env.spec().action_space {
            ActionSpace::Box { low, high } => (low.clone(), high.clone()),
            ActionSpace::Discrete { .. } => unreachable!("rejected at construction"),
        };
        let policy = &self.sac.policy;
        let mode = self.config.env_action;
        let stats = collect_episode(
            &mut self.env,
            &mut self.real,
            &mut self.env_rng,
            |obs, rng| {
                if warm {
                    random_action(&low, &high, rng)
                } else if mode == EnvAction::Mean {
                    policy.mean_action(obs)
                } else {
                    policy.act(obs, rng).0
                }
            },
        )?;
        self.episodes += 1;
        self.env_steps += stats.length;
        if stats.violation {
            self.violations += 1;
            if warm {
                self.warmup_violations += 1;
            }
        }
        self.schedule.update([stats.reward_min, stats.reward_max])?;
        Ok(stats)
    }

    /// Refits the model when the cadence says so.
    pub fn refit(&mut self) -> Result<Option<f64>> {
        let due = match (self.config.refit, self.last_refit) {
            (_, None) | (Refit::PerEpisode, _) => true,
            (Refit::EverySteps(n), Some(at)) => self.env_steps - at >= n,
        };
        if due {
            self.last_nll = self.model.fit(&self.real)?;
            self.last_refit = Some(self.env_steps);
        }
        Ok(self.last_nll)
    }

    /// `n_rollout` model rollouts, then `n_actor` actor-critic updates.
    pub fn iteration(&mut self) -> Result<Vec<UpdateStats>> {
        model_rollouts(
            &self.real,
            &mut self.synthetic,
            self.model.as_ref(),
            self.env.task().as_ref(),
            &self.sac.policy,
            &self.config.rollout(),
            &mut self.rollout_rng,
        )?;
        let c = self.schedule.c();
        let mut out = Vec::with_capacity(self.config.n_actor);
        for _ in 0..self.config.n_actor {
            let batch = sample_mixed(
                &self.real,
                &self.synthetic,
                self.config.sac.batch_size,
                self.config.real_fraction,
                &mut self.update_rng,
            );
            out.push(
                self.sac
                    .update(&batch, c, self.config.gamma, &mut self.update_rng)?,
            );
        }
        Ok(out)
    }

    /// Collects one episode and, once warmup is done, trains for as many
    /// iterations as the episode had steps (all warmup steps for the
    /// episode that ends warmup).
    pub fn episode(&mut self) -> Result<EpisodeRow> {
        let was_warm = self.env_steps < self.config.warmup_steps;
        let stats = self.collect()?;
        let mut row = EpisodeRow {
            episode: self.episodes,
            env_steps: self.env_steps,
            ret: stats.ret,
            cumulative_violations: self.violations,
            current_c: self.schedule.c(),
            model_nll: None,
            critic_loss: None,
            policy_loss: None,
        };
        if was_warm && self.env_steps < self.config.warmup_steps {
            return Ok(row);
        }
        let iterations = if was_warm {
            self.env_steps
        } else {
            stats.length
        };
        row.model_nll = self.refit()?;
        let (mut critic, mut policy, mut n) = (0.0, 0.0, 0usize);
        for _ in 0..iterations {
            for u in self.iteration()? {
                critic += u.critic_loss;
                policy += u.policy_loss;
                n += 1;
            }
        }
        if n > 0 {
            row.critic_loss = Some(critic / n as f64);
            row.policy_loss = Some(policy / n as f64);
        }
        Ok(row)
    }

    /// Trains until `total_env_steps`, handing each row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&EpisodeRow) -> Result<()>) -> Result<RunSummary> {
        let mut rows = Vec::new();
        while self.env_steps < self.config.total_env_steps {
            let row = self.episode()?;
            on_row(&row)?;
            rows.push(row);
        }
        Ok(self.summary(&rows))
    }

    pub fn summary(&self, rows: &[EpisodeRow]) -> RunSummary {
        RunSummary {
            seed: self.seed,
            episodes: self.episodes,
            env_steps: self.env_steps,
            final_return: final_return(rows),
            cumulative_violations: self.violations,
            warmup_violations: self.warmup_violations,
            post_warmup_violations: self.violations - self.warmup_violations,
            final_c: self.schedule.c(),
        }
    }

    /// Writes `models/`, `critic/`, `policy/` and `schedule.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for sub in ["models", "critic", "policy"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        match self.model.checkpoint()? {
            Some(text) => fs::write(dir.join("models/ensemble.json"), text)?,
            None => fs::write(dir.join("models/oracle.json"), r#"{"kind":"oracle"}"#)?,
        }
        fs::write(dir.join("critic/critic.json"), self.sac.critic.to_json()?)?;
        fs::write(
            dir.join("policy/policy.json"),
            serde_json::to_string(&self.sac.policy)?,
        )?;
        fs::write(
            dir.join("policy/entropy.json"),
            serde_json::to_string(&self.sac.entropy)?,
        )?;
        fs::write(
            dir.join("schedule.json"),
            serde_json::to_string_pretty(&self.schedule)?,
        )?;
        Ok(())
    }
}

pub fn load_schedule(dir: &Path) -> Result<PenaltySchedule> {
    let text = fs::read_to_string(dir.join("schedule.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("schedule.json: {e}")))
}
