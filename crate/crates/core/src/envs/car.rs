//! A car on a straight road approaching a stationary obstacle.
//!
//! Each step the car first moves by its current speed, then the pedal
//! changes the speed by one unit. Reward is the distance covered divided by
//! `v_max`, so it lies in `[0, 1]`. Colliding means reaching the obstacle.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, EnvSpec, Task, EPISODE_CAP};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarStopParams {
    /// Obstacle position; the car starts at 0.
    pub obstacle: u32,
    pub v_max: u32,
    pub start_speed: u32,
}

impl Default for CarStopParams {
    fn default() -> Self {
        Self {
            obstacle: 20,
            v_max: 3,
            start_speed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarAction {
    Brake,
    Coast,
    Accelerate,
}

impl CarAction {
    pub const ALL: [CarAction; 3] = [CarAction::Brake, CarAction::Coast, CarAction::Accelerate];

    /// Thresholds the continuous pedal in `[-1, 1]` at `±1/3`.
    pub fn from_pedal(pedal: f64) -> Self {
        if pedal < -1.0 / 3.0 {
            CarAction::Brake
        } else if pedal > 1.0 / 3.0 {
            CarAction::Accelerate
        } else {
            CarAction::Coast
        }
    }

    pub fn pedal(self) -> f64 {
        match self {
            CarAction::Brake => -1.0,
            CarAction::Coast => 0.0,
            CarAction::Accelerate => 1.0,
        }
    }

    fn delta(self) -> i64 {
        match self {
            CarAction::Brake => -1,
            CarAction::Coast => 0,
            CarAction::Accelerate => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarStopState {
    pub position: f64,
    pub speed: u32,
}

#[derive(Debug, Clone)]
pub struct CarStop {
    params: CarStopParams,
    spec: EnvSpec,
}

impl CarStop {
    pub fn new(params: CarStopParams) -> Result<Self> {
        if params.v_max == 0 || params.obstacle == 0 || params.start_speed > params.v_max {
            return Err(Error::Config(format!(
                "invalid car-stop parameters {params:?}"
            )));
        }
        let spec = EnvSpec {
            name: "car-stop".into(),
            obs_dim: 2,
            action_space: ActionSpace::Box {
                low: vec![-1.0],
                high: vec![1.0],
            },
            r_min: 0.0,
            r_max: 1.0,
            horizon: params.v_max,
            episode_cap: EPISODE_CAP,
            obs_scale: vec![params.obstacle as f64, params.v_max as f64],
        };
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> CarStopParams {
        self.params
    }

    /// One step of the car. Returns the next state, reward and whether the
    /// car reached the obstacle.
    pub fn car_step(&self, state: CarStopState, action: CarAction) -> (CarStopState, f64, bool) {
        let position = state.position + state.speed as f64;
        let speed = (state.speed as i64 + action.delta()).clamp(0, self.params.v_max as i64) as u32;
        let reward = state.speed as f64 / self.params.v_max as f64;
        let next = CarStopState { position, speed };
        (next, reward, position >= self.params.obstacle as f64)
    }

    /// Distance covered when braking on every step from `speed`.
    pub fn stopping_distance(speed: u32) -> u32 {
        speed * (speed + 1) / 2
    }

    pub fn decode(&self, state: &[f64]) -> CarStopState {
        let speed = state[1].round().clamp(0.0, self.params.v_max as f64) as u32;
        CarStopState {
            position: state[0],
            speed,
        }
    }

    pub fn encode(state: CarStopState) -> Vec<f64> {
        vec![state.position, state.speed as f64]
    }

    fn tabular_index(&self, state: CarStopState) -> usize {
        let (pos, speed) = (state.position as usize, state.speed as usize);
        if state.position >= self.params.obstacle as f64 {
            self.violation_index()
        } else {
            pos * (self.params.v_max as usize + 1) + speed
        }
    }

    fn violation_index(&self) -> usize {
        self.params.obstacle as usize * (self.params.v_max as usize + 1)
    }

    /// Inverse of the tabular indexing for non-violation states.
    pub fn tabular_state(&self, index: usize) -> Option<CarStopState> {
        if index >= self.violation_index() {
            return None;
        }
        let w = self.params.v_max as usize + 1;
        Some(CarStopState {
            position: (index / w) as f64,
            speed: (index % w) as u32,
        })
    }
}

impl Task for CarStop {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        Self::encode(CarStopState {
            position: 0.0,
            speed: self.params.start_speed,
        })
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (next, reward, _) = self.car_step(self.decode(state), CarAction::from_pedal(action[0]));
        Ok((Self::encode(next), reward))
    }

    fn is_unsafe(&self, state: &[f64]) -> bool {
        state[0] >= self.params.obstacle as f64
    }

    /// Integer positions below the obstacle times all speeds, plus a single
    /// absorbing violation state. Actions are ordered brake, coast, accelerate.
    fn tabularize(&self, gamma: f64) -> Result<TabularMdp> {
        let n = self.violation_index() + 1;
        let mut transition = vec![vec![0; 3]; n];
        let mut reward = vec![vec![0.0; 3]; n];
        for s in 0..n - 1 {
            let state = self.tabular_state(s).expect("below violation index");
            for (a, &action) in CarAction::ALL.iter().enumerate() {
                let (next, r, _) = self.car_step(state, action);
                transition[s][a] = self.tabular_index(next);
                reward[s][a] = r;
            }
        }
        transition[n - 1] = vec![n - 1; 3];
        TabularMdp::with_bounds(gamma, transition, reward, &[n - 1], 0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{classify_state, verify_horizon_assumption, SafetyLabel};

    fn car(obstacle: u32) -> CarStop {
        CarStop::new(CarStopParams {
            obstacle,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn braking_at_rest_changes_nothing() {
        let c = car(20);
        let (next, r, hit) = c.car_step(
            CarStopState {
                position: 4.0,
                speed: 0,
            },
            CarAction::Brake,
        );
        assert_eq!(
            next,
            CarStopState {
                position: 4.0,
                speed: 0
            }
        );
        assert_eq!(r, 0.0);
        assert!(!hit);
    }

    /// Every pedal sequence of length `depth` from `state`, reporting the
    /// first collision step of each branch.
    fn first_hits(c: &CarStop, state: CarStopState, depth: u32) -> Vec<Option<u32>> {
        fn go(c: &CarStop, s: CarStopState, t: u32, depth: u32, out: &mut Vec<Option<u32>>) {
            if t == depth {
                out.push(None);
                return;
            }
            for a in CarAction::ALL {
                let (n, _, hit) = c.car_step(s, a);
                if hit {
                    out.push(Some(t + 1));
                } else {
                    go(c, n, t + 1, depth, out);
                }
            }
        }
        let mut out = Vec::new();
        go(c, state, 0, depth, &mut out);
        out
    }

    #[test]
    fn gap_three_at_speed_three_is_irrecoverable() {
        let c = car(10);
        let start = CarStopState {
            position: 7.0,
            speed: 3,
        };
        let hits = first_hits(&c, start, 3);
        assert!(hits.iter().all(|h| matches!(h, Some(t) if *t <= 3)));
        let mdp = c.tabularize(0.99).unwrap();
        let label = classify_state(&mdp, c.tabular_index(start), 3);
        assert!(
            matches!(label, SafetyLabel::Irrecoverable { horizon_to_violation } if horizon_to_violation <= 3)
        );
    }

    #[test]
    fn gap_seven_braking_stops_after_six() {
        let c = car(10);
        let mut s = CarStopState {
            position: 3.0,
            speed: 3,
        };
        for _ in 0..3 {
            let (n, _, hit) = c.car_step(s, CarAction::Brake);
            assert!(!hit);
            s = n;
        }
        assert_eq!(
            s,
            CarStopState {
                position: 9.0,
                speed: 0
            }
        );
        assert_eq!(CarStop::stopping_distance(3), 6);
    }

    #[test]
    fn accelerating_inside_stopping_distance_collides_within_horizon() {
        let c = car(10);
        let mut s = CarStopState {
            position: 5.0,
            speed: 2,
        };
        let mut steps = 0;
        loop {
            let (n, _, hit) = c.car_step(s, CarAction::Accelerate);
            steps += 1;
            if hit {
                break;
            }
            s = n;
        }
        assert!(steps <= c.spec().horizon);
    }

    #[test]
    fn declared_horizon_holds_on_tabular_form() {
        for v_max in 1..=4 {
            let c = CarStop::new(CarStopParams {
                obstacle: 15,
                v_max,
                start_speed: 0,
            })
            .unwrap();
            let mdp = c.tabularize(0.99).unwrap();
            assert!(verify_horizon_assumption(&mdp, c.spec().horizon).holds);
            // And the horizon is tight.
            assert!(!verify_horizon_assumption(&mdp, c.spec().horizon - 1).holds || v_max == 1);
        }
    }

    #[test]
    fn tabular_form_agrees_with_step_function() {
        let c = car(12);
        let mdp = c.tabularize(0.9).unwrap();
        for s in 0..mdp.n_states() - 1 {
            let state = c.tabular_state(s).unwrap();
            for (a, &action) in CarAction::ALL.iter().enumerate() {
                let (next, r) = c
                    .transition(&CarStop::encode(state), &[action.pedal()])
                    .unwrap();
                assert_eq!(mdp.reward(s, a), r);
                let expected = if c.is_unsafe(&next) {
                    mdp.n_states() - 1
                } else {
                    c.tabular_index(c.decode(&next))
                };
                assert_eq!(mdp.next(s, a), expected);
            }
        }
    }

    #[test]
    fn pedal_thresholds() {
        assert_eq!(CarAction::from_pedal(-0.5), CarAction::Brake);
        assert_eq!(CarAction::from_pedal(0.0), CarAction::Coast);
        assert_eq!(CarAction::from_pedal(0.34), CarAction::Accelerate);
        for a in CarAction::ALL {
            assert_eq!(CarAction::from_pedal(a.pedal()), a);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(CarStop::new(CarStopParams {
            v_max: 0,
            ..Default::default()
        })
        .is_err());
        assert!(CarStop::new(CarStopParams {
            start_speed: 9,
            ..Default::default()
        })
        .is_err());
    }
}
