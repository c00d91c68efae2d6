//! Set-valued dynamics models and pessimistic planning.
//!
//! The Bellmin operator backs up the worst successor a calibrated model
//! admits:
//!
//! ```text
//! (B̲ Q)(s, a) = r̃(s, a) + γ · min_{s' ∈ T̂(s, a)} max_{a'} Q(s', a')
//! ```
//!
//! It is a γ-contraction, so iteration from `Q₀ = 0` converges to a unique
//! fixed point `Q̲*`, which lower-bounds the true Q function of the
//! terminal-cost MDP whenever the model is calibrated. Any state with
//! `max_a Q̲*(s, a) ≥ r_min / (1 − γ)` then has a certified safe greedy action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{iteration_cap, transform_terminal_cost, QFunction, TabularMdp};

/// A model mapping each `(state, action)` to a finite set of possible
/// successors. Sets are kept sorted and deduplicated so reductions over them
/// run in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetValuedModel {
    predictions: Vec<Vec<Vec<usize>>>,
}

impl SetValuedModel {
    /// Builds a model from `predictions[s][a]`. Empty sets are rejected.
    pub fn new(mut predictions: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        let n_actions = predictions.first().map(Vec::len).unwrap_or(0);
        for (s, row) in predictions.iter_mut().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidArgument(format!(
                    "state {s} has a ragged action row"
                )));
            }
            for (a, set) in row.iter_mut().enumerate() {
                if set.is_empty() {
                    return Err(Error::EmptyPrediction {
                        state: s,
                        action: a,
                    });
                }
                set.sort_unstable();
                set.dedup();
            }
        }
        Ok(Self { predictions })
    }

    /// The singleton model that predicts exactly the true successor.
    pub fn exact(mdp: &TabularMdp) -> Self {
        let predictions = (0..mdp.n_states())
            .map(|s| (0..mdp.n_actions()).map(|a| vec![mdp.next(s, a)]).collect())
            .collect();
        Self { predictions }
    }

    pub fn n_states(&self) -> usize {
        self.predictions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.predictions.first().map(Vec::len).unwrap_or(0)
    }

    pub fn predict(&self, s: usize, a: usize) -> &[usize] {
        &self.predictions[s][a]
    }

    /// Adds `extra` to the prediction set of `(s, a)`.
    pub fn insert(&mut self, s: usize, a: usize, extra: usize) {
        let set = &mut self.predictions[s][a];
        if let Err(pos) = set.binary_search(&extra) {
            set.insert(pos, extra);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SetValuedModel = serde_json::from_str(text)?;
        Self::new(raw.predictions)
    }

    fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(Error::InvalidArgument(format!(
                "model shape {}x{} does not match MDP {}x{}",
                self.n_states(),
                self.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                let set = self.predict(s, a);
                if set.is_empty() {
                    return Err(Error::EmptyPrediction {
                        state: s,
                        action: a,
                    });
                }
                if let Some(&bad) = set.iter().find(|&&t| t >= mdp.n_states()) {
                    return Err(Error::InvalidArgument(format!(
                        "prediction for ({s}, {a}) names state {bad}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// True iff the true successor lies in every prediction set.
pub fn check_calibrated(model: &SetValuedModel, mdp: &TabularMdp) -> bool {
    if model.n_states() != mdp.n_states() || model.n_actions() != mdp.n_actions() {
        return false;
    }
    (0..mdp.n_states()).all(|s| {
        (0..mdp.n_actions()).all(|a| model.predict(s, a).binary_search(&mdp.next(s, a)).is_ok())
    })
}

/// One application of the Bellmin operator. `transformed` supplies the
/// terminal-cost reward `r̃` and the discount.
pub fn bellmin_backup(
    q: &QFunction,
    model: &SetValuedModel,
    transformed: &TabularMdp,
) -> Result<QFunction> {
    model.check_shape(transformed)?;
    Ok(backup_unchecked(q, model, transformed))
}

fn backup_unchecked(q: &QFunction, model: &SetValuedModel, transformed: &TabularMdp) -> QFunction {
    let maxes: Vec<f64> = (0..transformed.n_states()).map(|s| q.max(s)).collect();
    QFunction::from_fn(transformed.n_states(), transformed.n_actions(), |s, a| {
        // Unsafe states are absorbing after the transform, whatever the model predicts.
        let worst = if transformed.is_unsafe(s) {
            maxes[s]
        } else {
            model
                .predict(s, a)
                .iter()
                .map(|&t| maxes[t])
                .fold(f64::INFINITY, f64::min)
        };
        transformed.reward(s, a) + transformed.gamma() * worst
    })
}

/// Fixed point of the Bellmin operator with its final residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PessimisticQ {
    pub q: QFunction,
    /// `‖B̲ q − q‖∞` of the returned table.
    pub residual: f64,
    pub iterations: usize,
}

/// Iterates the Bellmin operator on the terminal-cost transform of `mdp`
/// with cost `c`, starting from zero, until the residual is at most `tol`.
pub fn solve_bellmin(
    model: &SetValuedModel,
    mdp: &TabularMdp,
    c: f64,
    tol: f64,
) -> Result<PessimisticQ> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let transformed = transform_terminal_cost(mdp, c)?;
    model.check_shape(&transformed)?;
    let scale = transformed.r_min().abs().max(transformed.r_max().abs());
    let cap = iteration_cap(scale, transformed.gamma(), tol);
    let mut q = QFunction::zeros(mdp.n_states(), mdp.n_actions());
    let mut step = f64::INFINITY;
    for k in 1..=cap {
        let next = backup_unchecked(&q, model, &transformed);
        step = next.distance(&q);
        q = next;
        if transformed.gamma() * step <= tol {
            let residual = backup_unchecked(&q, model, &transformed).distance(&q);
            return Ok(PessimisticQ {
                q,
                residual,
                iterations: k,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual: step,
    })
}

/// Outcome of the safe-action test at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certification {
    pub certified: bool,
    /// Greedy action under the pessimistic Q (lowest index on ties).
    pub action: usize,
    pub value: f64,
}

/// Certifies the greedy action at `s` when its pessimistic value reaches the
/// safe floor `r_min / (1 − γ)`.
pub fn certify_action(q: &PessimisticQ, s: usize, r_min: f64, gamma: f64) -> Certification {
    let action = q.q.argmax(s);
    let value = q.q.get(s, action);
    Certification {
        certified: value >= r_min / (1.0 - gamma),
        action,
        value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{bellman_backup, solve_q_star};

    fn small() -> TabularMdp {
        TabularMdp::new(
            0.5,
            vec![vec![1, 2], vec![0, 1], vec![2, 2]],
            vec![vec![1.0, 1.0], vec![0.0, 0.5], vec![0.0, 0.0]],
            &[2],
        )
        .unwrap()
    }

    #[test]
    fn singleton_model_reduces_to_bellman() {
        let mdp = small();
        let t = transform_terminal_cost(&mdp, 2.0).unwrap();
        let model = SetValuedModel::exact(&mdp);
        let q = QFunction::from_fn(3, 2, |s, a| (s as f64) - 0.7 * a as f64);
        assert_eq!(
            bellmin_backup(&q, &model, &t).unwrap(),
            bellman_backup(&q, &t)
        );
        let zero = bellmin_backup(&QFunction::zeros(3, 2), &model, &t).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(zero.get(s, a), t.reward(s, a));
            }
        }
    }

    #[test]
    fn two_successor_hand_case() {
        // predict(0, 0) = {1, 2}; max q(1, ·) = 2, max q(2, ·) = −5, r̃ = 1, γ = 0.5.
        let mdp = TabularMdp::new(
            0.5,
            vec![vec![1], vec![1], vec![2]],
            vec![vec![1.0], vec![0.0], vec![0.0]],
            &[],
        )
        .unwrap();
        let model =
            SetValuedModel::new(vec![vec![vec![2, 1]], vec![vec![1]], vec![vec![2]]]).unwrap();
        let q = QFunction::from_fn(3, 1, |s, _| [0.0, 2.0, -5.0][s]);
        let out = bellmin_backup(&q, &model, &mdp).unwrap();
        let oracle = [2.0f64, -5.0]
            .iter()
            .map(|v| 1.0 + 0.5 * v)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.get(0, 0), -1.5);
        assert_eq!(out.get(0, 0), oracle);
    }

    #[test]
    fn empty_sets_are_rejected() {
        assert!(matches!(
            SetValuedModel::new(vec![vec![vec![0], vec![]]]),
            Err(Error::EmptyPrediction {
                state: 0,
                action: 1
            })
        ));
        assert!(SetValuedModel::from_json(r#"{"predictions":[[[0],[]]]}"#).is_err());
    }

    #[test]
    fn exact_model_matches_q_star() {
        let mdp = small();
        let c = 3.0;
        let tol = 1e-10;
        let p = solve_bellmin(&SetValuedModel::exact(&mdp), &mdp, c, tol).unwrap();
        let q = solve_q_star(&transform_terminal_cost(&mdp, c).unwrap(), tol).unwrap();
        assert!(p.residual <= tol);
        assert!(p.q.distance(&q) <= 2.0 * tol / (1.0 - mdp.gamma()));
    }

    #[test]
    fn adding_an_unsafe_successor_lowers_the_value() {
        let mdp = small();
        let exact = SetValuedModel::exact(&mdp);
        let mut inflated = exact.clone();
        inflated.insert(0, 0, 2);
        let base = solve_bellmin(&exact, &mdp, 3.0, 1e-10).unwrap();
        let worse = solve_bellmin(&inflated, &mdp, 3.0, 1e-10).unwrap();
        assert!(worse.q.get(0, 0) < base.q.get(0, 0) - 1e-6);
    }

    #[test]
    fn calibration_checks() {
        let mdp = small();
        let model = SetValuedModel::exact(&mdp);
        assert!(check_calibrated(&model, &mdp));
        let mut missing = model.clone();
        missing.predictions[1][0] = vec![2];
        assert!(!check_calibrated(&missing, &mdp));
        let mut bigger = model.clone();
        bigger.insert(1, 1, 0);
        bigger.insert(0, 1, 1);
        assert!(check_calibrated(&bigger, &mdp));
    }

    #[test]
    fn certification_at_the_safe_floor() {
        // Single all-safe state with reward r_min forever; this iteration
        // reaches its fixed point exactly in floating point.
        let r_min = 1.0;
        let gamma = 0.5;
        let mdp = TabularMdp::new(gamma, vec![vec![0, 0]], vec![vec![r_min, r_min]], &[]).unwrap();
        let p = solve_bellmin(&SetValuedModel::exact(&mdp), &mdp, 1.0, f64::MIN_POSITIVE).unwrap();
        let cert = certify_action(&p, 0, r_min, gamma);
        assert!(cert.certified);
        assert_eq!(cert.action, 0);
        assert_eq!(cert.value, r_min / (1.0 - gamma));
    }

    #[test]
    fn json_roundtrip() {
        let model = SetValuedModel::new(vec![vec![vec![1, 0], vec![1]], vec![vec![0], vec![0, 1]]])
            .unwrap();
        let text = model.to_json().unwrap();
        assert!(text.contains("\"predictions\""));
        assert_eq!(SetValuedModel::from_json(&text).unwrap(), model);
    }
}
