//! Toy environments with known safety structure.
//!
//! A [`Task`] is the pure description (dynamics, unsafe predicate, reward
//! bounds); an [`Env`] wraps one with episode bookkeeping.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub mod car;
pub mod conveyor;
pub mod point;

pub use car::{CarAction, CarStop, CarStopParams};
pub use conveyor::{Conveyor, ConveyorParams, Move};
pub use point::{PointHazard, PointHazardParams};

/// Episode length cap shared by all toys.
pub const EPISODE_CAP: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ActionSpace {
    /// Actions are a single index `0..n` passed as `[index as f64]`.
    Discrete {
        n: usize,
    },
    Box {
        low: Vec<f64>,
        high: Vec<f64>,
    },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { .. } => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSpace::Discrete { n: 0 } => {
                Err(Error::Config("empty discrete action space".into()))
            }
            ActionSpace::Discrete { .. } => Ok(()),
            ActionSpace::Box { low, high } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err(Error::Config(
                        "box action space needs matching non-empty bounds".into(),
                    ));
                }
                if low.iter().zip(high).any(|(l, h)| !(l < h)) {
                    return Err(Error::Config(format!(
                        "box bounds {low:?} / {high:?} are not ordered"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        match self {
            ActionSpace::Discrete { n } => {
                action.len() == 1
                    && action[0].fract() == 0.0
                    && action[0] >= 0.0
                    && (action[0] as usize) < *n
            }
            ActionSpace::Box { low, high } => {
                action.len() == low.len()
                    && action
                        .iter()
                        .zip(low.iter().zip(high))
                        .all(|(a, (l, h))| *l <= *a && *a <= *h)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub r_min: f64,
    pub r_max: f64,
    /// Worst-case steps from an irrecoverable state to a violation.
    pub horizon: u32,
    pub episode_cap: usize,
    /// Per-coordinate scale that brings observations to roughly unit size.
    pub obs_scale: Vec<f64>,
}

pub trait Task: fmt::Debug + Send + Sync {
    fn spec(&self) -> &EnvSpec;

    fn initial_state(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// True dynamics: next state and reward. Pure.
    fn transition(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64)>;

    fn is_unsafe(&self, state: &[f64]) -> bool;

    /// Exact tabular form in which unsafe states are absorbing.
    fn tabularize(&self, gamma: f64) -> Result<TabularMdp> {
        let _ = gamma;
        Err(Error::InvalidArgument(format!(
            "{} has no exact tabular form",
            self.spec().name
        )))
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: Vec<f64>,
    pub reward: f64,
    pub violation: bool,
    /// Episode cap reached without a violation.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.violation || self.truncated
    }
}

/// A task plus the current episode.
#[derive(Debug, Clone)]
pub struct Env {
    task: Arc<dyn Task>,
    state: Vec<f64>,
    steps: usize,
    over: bool,
}

impl Env {
    pub fn new(task: Arc<dyn Task>) -> Result<Self> {
        task.spec().action_space.validate()?;
        Ok(Self {
            task,
            state: Vec::new(),
            steps: 0,
            over: true,
        })
    }

    pub fn task(&self) -> &Arc<dyn Task> {
        &self.task
    }

    pub fn spec(&self) -> &EnvSpec {
        self.task.spec()
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.state = self.task.initial_state(rng);
        self.steps = 0;
        self.over = false;
        self.state.clone()
    }

    /// Starts an episode from a chosen state.
    pub fn reset_to(&mut self, state: Vec<f64>) -> Result<()> {
        if state.len() != self.spec().obs_dim {
            return Err(Error::InvalidArgument(format!(
                "state has {} coordinates",
                state.len()
            )));
        }
        self.over = self.task.is_unsafe(&state);
        self.state = state;
        self.steps = 0;
        Ok(())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.over {
            return Err(Error::EpisodeOver);
        }
        if !self.spec().action_space.contains(action) {
            return Err(Error::InvalidAction(format!(
                "{action:?} is outside {:?}",
                self.spec().action_space
            )));
        }
        let (next, reward) = self.task.transition(&self.state, action)?;
        self.steps += 1;
        let violation = self.task.is_unsafe(&next);
        let truncated = !violation && self.steps >= self.spec().episode_cap;
        self.over = violation || truncated;
        self.state = next.clone();
        Ok(Step {
            next,
            reward,
            violation,
            truncated,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvName {
    CarStop,
    Conveyor,
    PointHazard,
}

/// Environment selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    #[serde(default = "empty_params")]
    pub params: serde_json::Value,
}

fn empty_params() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl EnvConfig {
    pub fn named(name: EnvName) -> Self {
        Self {
            name,
            params: empty_params(),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Task>> {
        fn params<T: serde::de::DeserializeOwned>(v: &serde_json::Value, env: &str) -> Result<T> {
            serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("{env} params: {e}")))
        }
        Ok(match self.name {
            EnvName::CarStop => Arc::new(CarStop::new(params(&self.params, "car-stop")?)?),
            EnvName::Conveyor => Arc::new(Conveyor::new(params(&self.params, "conveyor")?)?),
            EnvName::PointHazard => {
                Arc::new(PointHazard::new(params(&self.params, "point-hazard")?)?)
            }
        })
    }
}
