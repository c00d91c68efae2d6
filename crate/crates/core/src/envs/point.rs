//! A point mass in a walled corridor with a hazard disk blocking the way.
//!
//! State is `(x, y, vx, vy)`. Thrust lives in `[-1, 1]²`. The reward pays for
//! velocity along +x minus a small thrust cost, so the mass is pushed toward
//! the hazard and has to stop in time.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, EnvSpec, Task, EPISODE_CAP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointHazardParams {
    /// Walls at `y = ±corridor_half_width`.
    pub corridor_half_width: f64,
    /// Hazard disk centre on the corridor axis.
    pub hazard_x: f64,
    pub hazard_radius: f64,
    pub v_max: f64,
    pub dt: f64,
    pub drag: f64,
    pub thrust_cost: f64,
}

impl Default for PointHazardParams {
    fn default() -> Self {
        Self {
            corridor_half_width: 1.0,
            hazard_x: 6.0,
            hazard_radius: 2.0,
            v_max: 1.0,
            dt: 0.25,
            drag: 0.05,
            thrust_cost: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointHazard {
    params: PointHazardParams,
    spec: EnvSpec,
}

/// The nine corner/edge/centre thrusts of the action box.
pub fn discrete_thrusts() -> [[f64; 2]; 9] {
    // Braking thrusts first so that escape searches succeed early.
    [
        [-1.0, 0.0],
        [-1.0, -1.0],
        [-1.0, 1.0],
        [0.0, 0.0],
        [0.0, -1.0],
        [0.0, 1.0],
        [1.0, 0.0],
        [1.0, -1.0],
        [1.0, 1.0],
    ]
}

impl PointHazard {
    pub fn new(params: PointHazardParams) -> Result<Self> {
        let p = params;
        let positive = [p.corridor_half_width, p.hazard_radius, p.v_max, p.dt];
        if positive.iter().any(|v| !(*v > 0.0))
            || !(0.0..1.0).contains(&p.drag)
            || !(p.thrust_cost >= 0.0)
        {
            return Err(Error::Config(format!(
                "invalid point-hazard parameters {params:?}"
            )));
        }
        if p.hazard_radius <= p.corridor_half_width {
            return Err(Error::Config("hazard must span the corridor".into()));
        }
        if p.hazard_x - p.hazard_radius <= 0.0 {
            return Err(Error::Config(
                "start position lies inside the hazard".into(),
            ));
        }
        let horizon = Self::braking_profile(&p).len() as u32;
        let spec = EnvSpec {
            name: "point-hazard".into(),
            obs_dim: 4,
            action_space: ActionSpace::Box {
                low: vec![-1.0, -1.0],
                high: vec![1.0, 1.0],
            },
            r_min: 0.0,
            r_max: 1.0,
            horizon,
            episode_cap: EPISODE_CAP,
            obs_scale: vec![p.hazard_x, p.corridor_half_width, p.v_max, p.v_max],
        };
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> PointHazardParams {
        self.params
    }

    /// Velocities under full reverse thrust from `v_max`, up to and
    /// including the first non-positive one.
    fn braking_profile(p: &PointHazardParams) -> Vec<f64> {
        let mut v = p.v_max;
        let mut out = Vec::new();
        loop {
            v = v * (1.0 - p.drag) - p.dt;
            out.push(v);
            if v <= 0.0 {
                return out;
            }
        }
    }

    /// Steps of full reverse thrust needed to stop from `v_max`.
    pub fn braking_steps(&self) -> u32 {
        Self::braking_profile(&self.params).len() as u32
    }

    /// Distance travelled while stopping from `v_max` under full reverse thrust.
    pub fn braking_distance(&self) -> f64 {
        Self::braking_profile(&self.params)
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| v * self.params.dt)
            .sum()
    }

    /// x-coordinate where the hazard meets the corridor axis.
    pub fn hazard_front(&self) -> f64 {
        self.params.hazard_x - self.params.hazard_radius
    }

    pub fn point_step(&self, state: &[f64], thrust: [f64; 2]) -> Result<(Vec<f64>, f64)> {
        if thrust.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return Err(Error::InvalidAction(format!(
                "thrust {thrust:?} outside [-1, 1]²"
            )));
        }
        let p = &self.params;
        let mut vx = state[2] * (1.0 - p.drag) + thrust[0] * p.dt;
        let mut vy = state[3] * (1.0 - p.drag) + thrust[1] * p.dt;
        let speed = vx.hypot(vy);
        if speed > p.v_max {
            vx *= p.v_max / speed;
            vy *= p.v_max / speed;
        }
        let x = state[0] + vx * p.dt;
        let mut y = state[1] + vy * p.dt;
        if y.abs() > p.corridor_half_width {
            y = p.corridor_half_width.copysign(y);
            vy = 0.0;
        }
        let reward = self.point_reward(vx, thrust);
        Ok((vec![x, y, vx, vy], reward))
    }

    /// `clamp(vx / v_max − κ‖thrust‖², 0, 1)`.
    pub fn point_reward(&self, vx: f64, thrust: [f64; 2]) -> f64 {
        let cost = self.params.thrust_cost * (thrust[0] * thrust[0] + thrust[1] * thrust[1]);
        (vx / self.params.v_max - cost).clamp(0.0, 1.0)
    }

    /// Whether some sequence of [`discrete_thrusts`] keeps the mass out of
    /// the hazard for `steps` steps.
    pub fn escapes_for(&self, state: &[f64], steps: u32) -> bool {
        if self.is_unsafe(state) {
            return false;
        }
        if steps == 0 {
            return true;
        }
        discrete_thrusts().iter().any(|&t| {
            let (next, _) = self
                .point_step(state, t)
                .expect("discrete thrusts are in range");
            self.escapes_for(&next, steps - 1)
        })
    }
}

impl Task for PointHazard {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0; 4]
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.point_step(state, [action[0], action[1]])
    }

    fn is_unsafe(&self, state: &[f64]) -> bool {
        (state[0] - self.params.hazard_x).hypot(state[1]) < self.params.hazard_radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PointHazard {
        PointHazard::new(PointHazardParams::default()).unwrap()
    }

    #[test]
    fn resting_mass_stays_put() {
        let e = env();
        let (next, r) = e.point_step(&[1.0, 0.5, 0.0, 0.0], [0.0, 0.0]).unwrap();
        assert_eq!(next, vec![1.0, 0.5, 0.0, 0.0]);
        assert_eq!(r, 0.0);
        assert!(!e.is_unsafe(&next));
    }

    #[test]
    fn braking_profile_closed_form() {
        // v_k = (1-d)^k v0 − dt·Σ_{j<k} (1-d)^j
        let e = env();
        let p = e.params();
        let k = e.braking_steps() as i32;
        let vk = |k: i32| {
            (1.0 - p.drag).powi(k) * p.v_max - p.dt * (1.0 - (1.0 - p.drag).powi(k)) / p.drag
        };
        assert!(vk(k) <= 0.0 && vk(k - 1) > 0.0);
        let dist: f64 = (1..k).map(|j| vk(j) * p.dt).sum();
        assert!((dist - e.braking_distance()).abs() < 1e-12);
        assert_eq!(e.spec().horizon, 4);
    }

    #[test]
    fn too_close_at_full_speed_collides_under_every_discrete_sequence() {
        let e = env();
        let h = e.spec().horizon;
        let start = [
            e.hazard_front() - 0.5 * e.braking_distance(),
            0.0,
            e.params().v_max,
            0.0,
        ];
        assert!(!e.escapes_for(&start, h));
        // Far enough away, braking straight avoids the hazard.
        let far = [
            e.hazard_front() - 2.0 * e.braking_distance(),
            0.0,
            e.params().v_max,
            0.0,
        ];
        assert!(e.escapes_for(&far, h + 2));
    }

    #[test]
    fn max_forward_speed_without_thrust_earns_r_max() {
        let e = PointHazard::new(PointHazardParams {
            drag: 0.0,
            ..Default::default()
        })
        .unwrap();
        let (next, r) = e.point_step(&[0.0, 0.0, 1.0, 0.0], [0.0, 0.0]).unwrap();
        assert_eq!(next[2], 1.0);
        assert_eq!(r, e.spec().r_max);
    }

    #[test]
    fn speed_is_capped_and_walls_clamp() {
        let e = env();
        let (next, _) = e.point_step(&[0.0, 0.99, 1.0, 1.0], [1.0, 1.0]).unwrap();
        assert!(next[2].hypot(next[3]) <= e.params().v_max + 1e-12);
        assert_eq!(next[1], 1.0);
        assert_eq!(next[3], 0.0);
    }

    #[test]
    fn reward_stays_in_bounds() {
        let e = env();
        for vx in [-2.0, -0.3, 0.0, 0.4, 1.0, 3.0] {
            for t in discrete_thrusts() {
                let r = e.point_reward(vx, t);
                assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn thrust_outside_box_is_rejected() {
        assert!(matches!(
            env().point_step(&[0.0; 4], [1.5, 0.0]),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(PointHazard::new(PointHazardParams {
            hazard_radius: 0.5,
            ..Default::default()
        })
        .is_err());
        assert!(PointHazard::new(PointHazardParams {
            drag: 1.0,
            ..Default::default()
        })
        .is_err());
        assert!(PointHazard::new(PointHazardParams {
            hazard_x: 1.0,
            ..Default::default()
        })
        .is_err());
    }
}
