//! Safety functions and the terminal-cost condition for stochastic tabular
//! MDPs.
//!
//! `μ*(s, a)` is the smallest achievable probability of ever entering the
//! unsafe set after taking `a` in `s`; `ν*(s) = min_a μ*(s, a)`. A pair is
//! p-irrecoverable when `μ*(s, a) ≥ p`. Under a rapid-failure assumption
//! (every p-irrecoverable pair fails within `H` steps with probability at
//! least `q`, whatever the agent does) a terminal cost
//! `C > max{α₁, α₂, 0}` makes p-safe actions strictly preferable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{unsafe_return_upper_bound, TabularMdp};

/// Probability vectors must sum to one within this tolerance.
pub const PROB_TOL: f64 = 1e-12;

/// Convergence tolerance for the safety-function fixed point.
pub const SAFETY_TOL: f64 = 1e-10;

const SAFETY_MAX_ITERS: usize = 5_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// Flat `(s, a)` rows of dense probability vectors.
    transition: Vec<Vec<f64>>,
    reward: Vec<f64>,
    unsafe_mask: Vec<bool>,
    r_min: f64,
    r_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StochasticDoc {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    #[serde(rename = "unsafe")]
    unsafe_states: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
}

impl StochasticMdp {
    /// Builds and validates an MDP from `transition[s][a][s']` and
    /// `reward[s][a]`. Reward bounds default to the table extrema.
    pub fn new(
        gamma: f64,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        unsafe_states: &[usize],
    ) -> Result<Self> {
        Self::build(gamma, transition, reward, unsafe_states, None)
    }

    fn build(
        gamma: f64,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        unsafe_states: &[usize],
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map(Vec::len).unwrap_or(0);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        if reward.len() != n_states {
            return Err(Error::InvalidMdp(
                "reward table has wrong number of states".into(),
            ));
        }
        let mut flat_t = Vec::with_capacity(n_states * n_actions);
        let mut flat_r = Vec::with_capacity(n_states * n_actions);
        for (s, (trow, rrow)) in transition.into_iter().zip(reward).enumerate() {
            if trow.len() != n_actions || rrow.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "state {s} has a ragged action row"
                )));
            }
            for (a, (probs, r)) in trow.into_iter().zip(rrow).enumerate() {
                if probs.len() != n_states {
                    return Err(Error::InvalidMdp(format!(
                        "P(·|{s},{a}) has length {}",
                        probs.len()
                    )));
                }
                if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidMdp(format!(
                        "P(·|{s},{a}) has a negative entry"
                    )));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!("P(·|{s},{a}) sums to {total}")));
                }
                if !r.is_finite() {
                    return Err(Error::InvalidMdp(format!("reward({s},{a}) is not finite")));
                }
                flat_t.push(probs);
                flat_r.push(r);
            }
        }
        let mut unsafe_mask = vec![false; n_states];
        for &u in unsafe_states {
            if u >= n_states {
                return Err(Error::InvalidMdp(format!("unsafe index {u} out of range")));
            }
            unsafe_mask[u] = true;
        }
        let lo = flat_r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = flat_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (r_min, r_max) = match bounds {
            Some((a, b)) if a <= b && a <= lo && hi <= b => (a, b),
            Some((a, b)) => {
                return Err(Error::InvalidMdp(format!(
                    "declared bounds [{a}, {b}] do not cover [{lo}, {hi}]"
                )))
            }
            None => (lo, hi),
        };
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            transition: flat_t,
            reward: flat_r,
            unsafe_mask,
            r_min,
            r_max,
        })
    }

    /// Embeds a deterministic MDP as point-mass transitions.
    pub fn from_deterministic(mdp: &TabularMdp) -> Self {
        let n = mdp.n_states();
        let m = mdp.n_actions();
        let mut transition = Vec::with_capacity(n * m);
        let mut reward = Vec::with_capacity(n * m);
        for s in 0..n {
            for a in 0..m {
                let mut probs = vec![0.0; n];
                probs[mdp.next(s, a)] = 1.0;
                transition.push(probs);
                reward.push(mdp.reward(s, a));
            }
        }
        Self {
            n_states: n,
            n_actions: m,
            gamma: mdp.gamma(),
            transition,
            reward,
            unsafe_mask: (0..n).map(|s| mdp.is_unsafe(s)).collect(),
            r_min: mdp.r_min(),
            r_max: mdp.r_max(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn probs(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s * self.n_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn is_unsafe(&self, s: usize) -> bool {
        self.unsafe_mask[s]
    }

    pub fn to_json(&self) -> Result<String> {
        let n = self.n_actions;
        let doc = StochasticDoc {
            n_states: self.n_states,
            n_actions: n,
            gamma: self.gamma,
            transition: self
                .transition
                .chunks(n)
                .map(<[Vec<f64>]>::to_vec)
                .collect(),
            reward: self.reward.chunks(n).map(<[f64]>::to_vec).collect(),
            unsafe_states: (0..self.n_states)
                .filter(|&s| self.unsafe_mask[s])
                .collect(),
            r_min: Some(self.r_min),
            r_max: Some(self.r_max),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses and validates a document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StochasticDoc = serde_json::from_str(text)?;
        if doc.transition.len() != doc.n_states
            || doc.transition.first().map(Vec::len) != Some(doc.n_actions)
        {
            return Err(Error::InvalidMdp(
                "declared sizes do not match the transition table".into(),
            ));
        }
        let bounds = match (doc.r_min, doc.r_max) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidMdp(
                    "r_min and r_max must be given together".into(),
                ))
            }
        };
        Self::build(
            doc.gamma,
            doc.transition,
            doc.reward,
            &doc.unsafe_states,
            bounds,
        )
    }

    /// Terminal-cost transform: unsafe states self-loop with reward `−c`.
    pub fn with_terminal_cost(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "terminal cost must be finite and >= 0, got {c}"
            )));
        }
        let mut out = self.clone();
        for s in 0..self.n_states {
            if self.unsafe_mask[s] {
                for a in 0..self.n_actions {
                    let i = s * self.n_actions + a;
                    out.transition[i] = vec![0.0; self.n_states];
                    out.transition[i][s] = 1.0;
                    out.reward[i] = -c;
                }
                out.r_min = out.r_min.min(-c);
            }
        }
        Ok(out)
    }

    /// Exact optimal Q by value iteration (sup-norm residual `tol`).
    pub fn solve_q_star(&self, tol: f64) -> Result<Vec<f64>> {
        let n = self.n_states;
        let m = self.n_actions;
        let scale = self.r_min.abs().max(self.r_max.abs());
        let cap = crate::mdp::iteration_cap(scale, self.gamma, tol);
        let mut q = vec![0.0; n * m];
        let mut step = f64::INFINITY;
        for _ in 0..cap {
            let v: Vec<f64> = (0..n).map(|s| max_row(&q[s * m..(s + 1) * m])).collect();
            let next: Vec<f64> = (0..n * m)
                .map(|i| self.reward[i] + self.gamma * dot(&self.transition[i], &v))
                .collect();
            step = sup_diff(&next, &q);
            q = next;
            if self.gamma * step <= tol {
                return Ok(q);
            }
        }
        Err(Error::NoConvergence {
            iterations: cap,
            residual: step,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_row(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_row(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::INFINITY, f64::min)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyVariant {
    Policy,
    Optimal,
}

/// Violation probabilities per pair (`mu`) and per state (`nu`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyFunctions {
    n_actions: usize,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub variant: SafetyVariant,
}

impl SafetyFunctions {
    pub fn mu(&self, s: usize, a: usize) -> f64 {
        self.mu[s * self.n_actions + a]
    }

    pub fn nu(&self, s: usize) -> f64 {
        self.nu[s]
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Optimal safety functions by undiscounted fixed-point iteration from zero.
///
/// Episodes end on entering the unsafe set, so unsafe states have `μ = 1`
/// and for safe `s`:
/// `μ(s, a) = Σ_{s'} P(s'|s, a) · (1 if s' unsafe else min_{a'} μ(s', a'))`.
pub fn solve_safety_functions(mdp: &StochasticMdp) -> Result<SafetyFunctions> {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut nu: Vec<f64> = (0..n)
        .map(|s| if mdp.is_unsafe(s) { 1.0 } else { 0.0 })
        .collect();
    let mut mu = vec![0.0; n * m];
    for _ in 0..SAFETY_MAX_ITERS {
        let next_mu: Vec<f64> = (0..n * m)
            .map(|i| {
                if mdp.is_unsafe(i / m) {
                    1.0
                } else {
                    dot(mdp.probs(i / m, i % m), &nu)
                }
            })
            .collect();
        let step = sup_diff(&next_mu, &mu);
        mu = next_mu;
        nu = (0..n).map(|s| min_row(&mu[s * m..(s + 1) * m])).collect();
        if step <= SAFETY_TOL {
            return Ok(SafetyFunctions {
                n_actions: m,
                mu,
                nu,
                variant: SafetyVariant::Optimal,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: SAFETY_MAX_ITERS,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PClass {
    PSafe,
    PIrrecoverable,
}

/// `(s, a)` is p-irrecoverable iff `μ*(s, a) ≥ p`.
pub fn p_classify(sf: &SafetyFunctions, s: usize, a: usize, p: f64) -> PClass {
    if sf.mu(s, a) >= p {
        PClass::PIrrecoverable
    } else {
        PClass::PSafe
    }
}

/// Upper bound on the return of a trajectory that fails within `horizon`
/// steps (same expression as the deterministic bound).
pub fn r_c(r_max: f64, c: f64, gamma: f64, horizon: u32) -> f64 {
    unsafe_return_upper_bound(r_max, c, gamma, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticPenaltyParams {
    pub r_min: f64,
    pub r_max: f64,
    pub gamma: f64,
    pub horizon: u32,
    pub p: f64,
    pub q: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub c: f64,
}

/// Terminal cost for the stochastic setting:
///
/// ```text
/// α₁ = (r_max(1 − qγ^H) − (1 − p) r_min) / (qγ^H − p)
/// α₂ = (r_max(2 − q − γ^H) − (1 − p) r_min) / (γ^H − p)
/// C  = max{α₁, α₂, 0} + margin
/// ```
///
/// Both denominators must be positive; otherwise the bound does not apply.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_penalty(
    r_min: f64,
    r_max: f64,
    gamma: f64,
    horizon: u32,
    p: f64,
    q: f64,
    margin: f64,
) -> Result<StochasticPenaltyParams> {
    if r_min > r_max {
        return Err(Error::InvalidArgument(format!(
            "r_min {r_min} > r_max {r_max}"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "p = {p} and q = {q} must be probabilities"
        )));
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let gh = gamma.powi(horizon as i32);
    let den1 = q * gh - p;
    let den2 = gh - p;
    if !(den1 > 0.0) {
        return Err(Error::FormulaInapplicable(format!(
            "q·γ^H − p = {den1} is not positive"
        )));
    }
    if !(den2 > 0.0) {
        return Err(Error::FormulaInapplicable(format!(
            "γ^H − p = {den2} is not positive"
        )));
    }
    let alpha1 = (r_max * (1.0 - q * gh) - (1.0 - p) * r_min) / den1;
    let alpha2 = (r_max * (2.0 - q - gh) - (1.0 - p) * r_min) / den2;
    let c = alpha1.max(alpha2).max(0.0) + margin;
    Ok(StochasticPenaltyParams {
        r_min,
        r_max,
        gamma,
        horizon,
        p,
        q,
        alpha1,
        alpha2,
        c,
    })
}

/// Smallest probability, over all (adaptive) action choices after the first,
/// of reaching the unsafe set within `horizon` steps of taking `a` in `s`.
/// Returned as a flat `(s, a)` table.
pub fn min_failure_within(mdp: &StochasticMdp, horizon: u32) -> Vec<f64> {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    // f[s'] = min probability of failing within k remaining steps from s'.
    let mut f: Vec<f64> = (0..n)
        .map(|s| if mdp.is_unsafe(s) { 1.0 } else { 0.0 })
        .collect();
    let mut g = vec![0.0; n * m];
    for _ in 0..horizon {
        for i in 0..n * m {
            let s = i / m;
            g[i] = if mdp.is_unsafe(s) {
                1.0
            } else {
                dot(mdp.probs(s, i % m), &f)
            };
        }
        f = (0..n)
            .map(|s| {
                if mdp.is_unsafe(s) {
                    1.0
                } else {
                    min_row(&g[s * m..(s + 1) * m])
                }
            })
            .collect();
    }
    g
}

/// Checks the rapid-failure assumption for every p-irrecoverable pair at a
/// non-unsafe state.
pub fn check_rapid_failure(
    mdp: &StochasticMdp,
    sf: &SafetyFunctions,
    p: f64,
    q: f64,
    horizon: u32,
) -> Result<()> {
    let g = min_failure_within(mdp, horizon);
    let m = mdp.n_actions();
    for s in (0..mdp.n_states()).filter(|&s| !mdp.is_unsafe(s)) {
        for a in 0..m {
            if p_classify(sf, s, a, p) == PClass::PIrrecoverable && g[s * m + a] < q {
                return Err(Error::AssumptionViolated(format!(
                    "({s}, {a}) is {p}-irrecoverable but fails within {horizon} steps with probability {} < {q}",
                    g[s * m + a]
                )));
            }
        }
    }
    Ok(())
}

/// A violation of the separation property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationFailure {
    pub state: usize,
    pub safe_action: usize,
    pub irrecoverable_action: usize,
    pub gap: f64,
}

/// Solves the terminal-cost MDP exactly and lists every p-safe state where a
/// p-safe action fails to strictly outvalue a p-irrecoverable one.
///
/// The rapid-failure assumption is checked first and reported as
/// [`Error::AssumptionViolated`].
pub fn separation_failures(
    mdp: &StochasticMdp,
    p: f64,
    q: f64,
    horizon: u32,
    c: f64,
) -> Result<Vec<SeparationFailure>> {
    let sf = solve_safety_functions(mdp)?;
    check_rapid_failure(mdp, &sf, p, q, horizon)?;
    let qt = mdp.with_terminal_cost(c)?.solve_q_star(1e-12)?;
    let m = mdp.n_actions();
    let mut failures = Vec::new();
    for s in (0..mdp.n_states()).filter(|&s| !mdp.is_unsafe(s) && sf.nu(s) < p) {
        for a in (0..m).filter(|&a| p_classify(&sf, s, a, p) == PClass::PSafe) {
            for b in (0..m).filter(|&b| p_classify(&sf, s, b, p) == PClass::PIrrecoverable) {
                let gap = qt[s * m + a] - qt[s * m + b];
                if !(gap > 0.0) {
                    failures.push(SeparationFailure {
                        state: s,
                        safe_action: a,
                        irrecoverable_action: b,
                        gap,
                    });
                }
            }
        }
    }
    Ok(failures)
}

/// True iff p-safe actions strictly outvalue p-irrecoverable ones at every
/// p-safe state of the terminal-cost MDP with cost `c`.
pub fn verify_stochastic_separation(
    mdp: &StochasticMdp,
    p: f64,
    q: f64,
    horizon: u32,
    c: f64,
) -> Result<bool> {
    Ok(separation_failures(mdp, p, q, horizon, c)?.is_empty())
}
