//! Deterministic tabular MDPs: Bellman backups, value iteration, the
//! terminal-cost transform, penalty arithmetic, and brute-force safety
//! classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default value-iteration tolerance (sup norm).
pub const DEFAULT_TOL: f64 = 1e-9;

/// Relative margin placed above the strict penalty bound.
pub const DEFAULT_MARGIN_REL: f64 = 1e-6;

/// A finite deterministic MDP with an engineer-specified unsafe set.
///
/// `r_min`/`r_max` are the declared reward bounds; when a document omits them
/// they default to the extrema of the reward table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<usize>,
    reward: Vec<f64>,
    unsafe_mask: Vec<bool>,
    r_min: f64,
    r_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDoc {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<Vec<usize>>,
    reward: Vec<Vec<f64>>,
    #[serde(rename = "unsafe")]
    unsafe_states: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
}

impl TabularMdp {
    /// Builds an MDP from nested `[state][action]` tables. Reward bounds are
    /// taken from the table.
    pub fn new(
        gamma: f64,
        transition: Vec<Vec<usize>>,
        reward: Vec<Vec<f64>>,
        unsafe_states: &[usize],
    ) -> Result<Self> {
        Self::build(gamma, transition, reward, unsafe_states, None)
    }

    /// Same as [`TabularMdp::new`] with explicitly declared reward bounds.
    pub fn with_bounds(
        gamma: f64,
        transition: Vec<Vec<usize>>,
        reward: Vec<Vec<f64>>,
        unsafe_states: &[usize],
        r_min: f64,
        r_max: f64,
    ) -> Result<Self> {
        Self::build(
            gamma,
            transition,
            reward,
            unsafe_states,
            Some((r_min, r_max)),
        )
    }

    fn build(
        gamma: f64,
        transition: Vec<Vec<usize>>,
        reward: Vec<Vec<f64>>,
        unsafe_states: &[usize],
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::InvalidMdp("no states".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidMdp("no actions".into()));
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
        for (s, (trow, rrow)) in transition.iter().zip(&reward).enumerate() {
            if trow.len() != n_actions || rrow.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "state {s} has a ragged action row"
                )));
            }
            for (&t, &r) in trow.iter().zip(rrow) {
                if t >= n_states {
                    return Err(Error::InvalidMdp(format!("state {s} transitions to {t}")));
                }
                if !r.is_finite() {
                    return Err(Error::InvalidMdp(format!(
                        "state {s} has non-finite reward"
                    )));
                }
                flat_t.push(t);
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
            Some((a, b)) => {
                if a > b {
                    return Err(Error::InvalidMdp(format!("r_min {a} > r_max {b}")));
                }
                if lo < a || hi > b {
                    return Err(Error::InvalidMdp(format!(
                        "rewards [{lo}, {hi}] exceed declared bounds [{a}, {b}]"
                    )));
                }
                (a, b)
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

    #[inline]
    pub fn next(&self, s: usize, a: usize) -> usize {
        self.transition[s * self.n_actions + a]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    #[inline]
    pub fn is_unsafe(&self, s: usize) -> bool {
        self.unsafe_mask[s]
    }

    pub fn unsafe_states(&self) -> Vec<usize> {
        (0..self.n_states)
            .filter(|&s| self.unsafe_mask[s])
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDoc = serde_json::from_str(text)?;
        Self::from_doc(doc)
    }

    fn to_doc(&self) -> MdpDoc {
        let rows = |v: &[f64]| v.chunks(self.n_actions).map(<[f64]>::to_vec).collect();
        MdpDoc {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            transition: self
                .transition
                .chunks(self.n_actions)
                .map(<[usize]>::to_vec)
                .collect(),
            reward: rows(&self.reward),
            unsafe_states: self.unsafe_states(),
            r_min: Some(self.r_min),
            r_max: Some(self.r_max),
        }
    }

    fn from_doc(doc: MdpDoc) -> Result<Self> {
        if doc.transition.len() != doc.n_states {
            return Err(Error::InvalidMdp(format!(
                "n_states = {} but transition has {} rows",
                doc.n_states,
                doc.transition.len()
            )));
        }
        if doc.transition.first().map(Vec::len) != Some(doc.n_actions) {
            return Err(Error::InvalidMdp(
                "n_actions does not match transition rows".into(),
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
}

impl Serialize for TabularMdp {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TabularMdp {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let doc = MdpDoc::deserialize(deserializer)?;
        Self::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

/// Dense action-value table indexed by `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QFunction {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, 0.0)
    }

    pub fn constant(n_states: usize, n_actions: usize, c: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![c; n_states * n_actions],
        }
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(s, a));
            }
        }
        Self {
            n_states,
            n_actions,
            values,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `max_a q(s, a)`.
    pub fn max(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action; ties go to the lowest index.
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sup-norm distance.
    pub fn distance(&self, other: &QFunction) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One application of the optimal Bellman operator:
/// `r(s,a) + γ max_a' q(T(s,a), a')`.
pub fn bellman_backup(q: &QFunction, mdp: &TabularMdp) -> QFunction {
    let maxes: Vec<f64> = (0..mdp.n_states()).map(|s| q.max(s)).collect();
    QFunction::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        mdp.reward(s, a) + mdp.gamma() * maxes[mdp.next(s, a)]
    })
}

/// Iteration count sufficient for value iteration from `q0 = 0` to reach
/// residual `tol`, plus slack.
pub(crate) fn iteration_cap(max_abs_reward: f64, gamma: f64, tol: f64) -> usize {
    if gamma == 0.0 {
        return 4;
    }
    let dist = (max_abs_reward / (1.0 - gamma)).max(tol);
    let k = ((tol * (1.0 - gamma) / dist).ln() / gamma.ln())
        .ceil()
        .max(0.0) as usize;
    2 * k + 16
}

fn max_abs_reward(mdp: &TabularMdp) -> f64 {
    mdp.r_min().abs().max(mdp.r_max().abs())
}

/// Value iteration from `Q₀ = 0` to the optimal Q function.
///
/// The returned table satisfies `‖B q − q‖∞ ≤ tol`.
pub fn solve_q_star(mdp: &TabularMdp, tol: f64) -> Result<QFunction> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let cap = iteration_cap(max_abs_reward(mdp), mdp.gamma(), tol);
    let mut q = QFunction::zeros(mdp.n_states(), mdp.n_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        let next = bellman_backup(&q, mdp);
        residual = next.distance(&q);
        q = next;
        // ‖B q_{k+1} − q_{k+1}‖ ≤ γ ‖q_{k+1} − q_k‖
        if mdp.gamma() * residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual,
    })
}

/// Makes unsafe states absorbing with per-step reward `−c`.
pub fn transform_terminal_cost(mdp: &TabularMdp, c: f64) -> Result<TabularMdp> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "terminal cost must be finite and >= 0, got {c}"
        )));
    }
    let mut out = mdp.clone();
    for s in 0..mdp.n_states() {
        if mdp.is_unsafe(s) {
            for a in 0..mdp.n_actions() {
                let i = s * mdp.n_actions() + a;
                out.transition[i] = s;
                out.reward[i] = -c;
            }
        }
    }
    if mdp.unsafe_mask.iter().any(|&u| u) {
        out.r_min = mdp.r_min().min(-c);
    }
    Ok(out)
}

/// The strict lower bound `(r_max − r_min)/γ^H − r_max` on the terminal cost.
pub fn terminal_cost_bound(r_min: f64, r_max: f64, gamma: f64, horizon: u32) -> Result<f64> {
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
    Ok((r_max - r_min) / gamma.powi(horizon as i32) - r_max)
}

/// Terminal cost making every unsafe action suboptimal: the penalty bound
/// clamped at zero, plus `margin`.
pub fn compute_terminal_cost(
    r_min: f64,
    r_max: f64,
    gamma: f64,
    horizon: u32,
    margin: f64,
) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive, got {margin}"
        )));
    }
    Ok(terminal_cost_bound(r_min, r_max, gamma, horizon)?.max(0.0) + margin)
}

/// Margin used by [`PenaltyParams::from_bounds`]: `1e-6` relative to the
/// bound, never below `1e-6` absolute.
pub fn default_margin(bound: f64) -> f64 {
    DEFAULT_MARGIN_REL * bound.abs().max(1.0)
}

/// Upper bound on the discounted return of a trajectory that is absorbed in
/// the unsafe set within `horizon` steps.
pub fn unsafe_return_upper_bound(r_max: f64, c: f64, gamma: f64, horizon: u32) -> f64 {
    let gh = gamma.powi(horizon as i32);
    (r_max * (1.0 - gh) - c * gh) / (1.0 - gamma)
}

/// Reward bounds, rapid-failure horizon and the terminal cost derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub r_min: f64,
    pub r_max: f64,
    pub gamma: f64,
    pub horizon: u32,
    pub terminal_cost: f64,
}

impl PenaltyParams {
    pub fn from_bounds(r_min: f64, r_max: f64, gamma: f64, horizon: u32) -> Result<Self> {
        let bound = terminal_cost_bound(r_min, r_max, gamma, horizon)?;
        let terminal_cost = bound.max(0.0) + default_margin(bound);
        Ok(Self {
            r_min,
            r_max,
            gamma,
            horizon,
            terminal_cost,
        })
    }

    /// True when the terminal cost strictly exceeds the penalty bound.
    pub fn is_valid(&self) -> bool {
        match terminal_cost_bound(self.r_min, self.r_max, self.gamma, self.horizon) {
            Ok(b) => self.terminal_cost > b,
            Err(_) => false,
        }
    }

    /// `r_min / (1 − γ)`: the return floor of staying safe forever.
    pub fn safe_floor(&self) -> f64 {
        self.r_min / (1.0 - self.gamma)
    }
}

/// Safety status of a state in a deterministic MDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyLabel {
    Violation,
    /// Every action sequence reaches the unsafe set; the field is the latest
    /// possible first-violation time.
    Irrecoverable {
        horizon_to_violation: u32,
    },
    Safe,
}

impl SafetyLabel {
    /// Violation or irrecoverable.
    pub fn is_unsafe(&self) -> bool {
        !matches!(self, SafetyLabel::Safe)
    }
}

/// Memoized exact safety analysis of every state.
///
/// `safe(s)` holds iff some infinite action sequence from `s` avoids the
/// unsafe set. A depth-first search with an on-stack marker certifies safety
/// on the first cycle of non-unsafe states.
struct SafetyAnalysis<'a> {
    mdp: &'a TabularMdp,
    safe: Vec<Option<bool>>,
    on_stack: Vec<bool>,
    horizon: Vec<Option<u32>>,
}

impl<'a> SafetyAnalysis<'a> {
    fn new(mdp: &'a TabularMdp) -> Self {
        let n = mdp.n_states();
        Self {
            mdp,
            safe: vec![None; n],
            on_stack: vec![false; n],
            horizon: vec![None; n],
        }
    }

    fn is_safe(&mut self, s: usize) -> bool {
        if self.mdp.is_unsafe(s) {
            return false;
        }
        if self.on_stack[s] {
            return true;
        }
        if let Some(v) = self.safe[s] {
            return v;
        }
        self.on_stack[s] = true;
        let mut found = false;
        for a in 0..self.mdp.n_actions() {
            if self.is_safe(self.mdp.next(s, a)) {
                found = true;
                break;
            }
        }
        self.on_stack[s] = false;
        self.safe[s] = Some(found);
        found
    }

    /// Latest first-violation time from a non-safe state (0 for unsafe states).
    /// Irrecoverable states form an acyclic region, so the recursion terminates.
    fn horizon_to_violation(&mut self, s: usize) -> u32 {
        if self.mdp.is_unsafe(s) {
            return 0;
        }
        if let Some(h) = self.horizon[s] {
            return h;
        }
        let h = (0..self.mdp.n_actions())
            .map(|a| 1 + self.horizon_to_violation(self.mdp.next(s, a)))
            .max()
            .unwrap_or(1);
        self.horizon[s] = Some(h);
        h
    }

    fn label(&mut self, s: usize) -> SafetyLabel {
        if self.mdp.is_unsafe(s) {
            SafetyLabel::Violation
        } else if self.is_safe(s) {
            SafetyLabel::Safe
        } else {
            SafetyLabel::Irrecoverable {
                horizon_to_violation: self.horizon_to_violation(s),
            }
        }
    }
}

/// Classifies one state.
///
/// Action sequences of length `h_max` are enumerated explicitly (memoized on
/// `(state, depth)`); a branch that survives all `h_max` steps certifies
/// safety when its endpoint is itself safe.
pub fn classify_state(mdp: &TabularMdp, s: usize, h_max: u32) -> SafetyLabel {
    assert!(h_max >= 1, "h_max must be at least 1");
    if mdp.is_unsafe(s) {
        return SafetyLabel::Violation;
    }
    let mut analysis = SafetyAnalysis::new(mdp);
    // None: some branch survives h_max steps and ends in a safe state.
    // Some(t): every branch is violating or doomed; t is the latest violation.
    fn search(
        mdp: &TabularMdp,
        analysis: &mut SafetyAnalysis<'_>,
        memo: &mut std::collections::HashMap<(usize, u32), Option<u32>>,
        s: usize,
        depth: u32,
    ) -> Option<u32> {
        if mdp.is_unsafe(s) {
            return Some(0);
        }
        if depth == 0 {
            return if analysis.is_safe(s) {
                None
            } else {
                Some(analysis.horizon_to_violation(s))
            };
        }
        if let Some(&r) = memo.get(&(s, depth)) {
            return r;
        }
        let mut worst = 0;
        let mut result = None;
        let mut doomed = true;
        for a in 0..mdp.n_actions() {
            match search(mdp, analysis, memo, mdp.next(s, a), depth - 1) {
                None => {
                    doomed = false;
                    break;
                }
                Some(t) => worst = worst.max(t + 1),
            }
        }
        if doomed {
            result = Some(worst);
        }
        memo.insert((s, depth), result);
        result
    }
    let mut memo = std::collections::HashMap::new();
    match search(mdp, &mut analysis, &mut memo, s, h_max) {
        None => SafetyLabel::Safe,
        Some(t) => SafetyLabel::Irrecoverable {
            horizon_to_violation: t,
        },
    }
}

/// Labels every state.
pub fn classify_all(mdp: &TabularMdp) -> Vec<SafetyLabel> {
    let mut analysis = SafetyAnalysis::new(mdp);
    (0..mdp.n_states()).map(|s| analysis.label(s)).collect()
}

/// Result of checking the rapid-failure horizon assumption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HorizonCheck {
    pub holds: bool,
    /// Irrecoverable states whose worst-case violation time exceeds the horizon.
    pub counterexamples: Vec<usize>,
}

/// Checks that every irrecoverable state fails within `horizon` steps.
pub fn verify_horizon_assumption(mdp: &TabularMdp, horizon: u32) -> HorizonCheck {
    let counterexamples: Vec<usize> = classify_all(mdp)
        .iter()
        .enumerate()
        .filter_map(|(s, label)| match label {
            SafetyLabel::Irrecoverable {
                horizon_to_violation,
            } if *horizon_to_violation > horizon => Some(s),
            _ => None,
        })
        .collect();
    HorizonCheck {
        holds: counterexamples.is_empty(),
        counterexamples,
    }
}

/// Smallest horizon for which the rapid-failure assumption holds
/// (`1` when there are no irrecoverable states).
pub fn minimal_horizon(labels: &[SafetyLabel]) -> u32 {
    labels
        .iter()
        .filter_map(|l| match l {
            SafetyLabel::Irrecoverable {
                horizon_to_violation,
            } => Some(*horizon_to_violation),
            _ => None,
        })
        .max()
        .unwrap_or(1)
}

/// Latest violation time counted from a non-unsafe state that takes an
/// unsafe action: `1 + horizon_to_violation(T(s, a))`, maximized over such
/// pairs. This is the step count the terminal-cost bound must cover.
pub fn unsafe_action_horizon(mdp: &TabularMdp, labels: &[SafetyLabel]) -> u32 {
    let mut worst = 1;
    for s in 0..mdp.n_states() {
        if mdp.is_unsafe(s) {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let h = match labels[mdp.next(s, a)] {
                SafetyLabel::Violation => 1,
                SafetyLabel::Irrecoverable {
                    horizon_to_violation,
                } => 1 + horizon_to_violation,
                SafetyLabel::Safe => continue,
            };
            worst = worst.max(h);
        }
    }
    worst
}

/// Follows the greedy policy of `q` for `steps` steps; returns visited states
/// including the start.
pub fn greedy_rollout(mdp: &TabularMdp, q: &QFunction, start: usize, steps: usize) -> Vec<usize> {
    let mut path = Vec::with_capacity(steps + 1);
    let mut s = start;
    path.push(s);
    for _ in 0..steps {
        s = mdp.next(s, q.argmax(s));
        path.push(s);
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMdp {
        // 0 -a0-> 0 (r=1), 0 -a1-> 1 (r=0); 1 -> 1 (r=0)
        TabularMdp::new(
            0.5,
            vec![vec![0, 1], vec![1, 1]],
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            &[1],
        )
        .unwrap()
    }

    #[test]
    fn zero_q_backup_is_reward() {
        let mdp = two_state();
        let out = bellman_backup(&QFunction::zeros(2, 2), &mdp);
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(out.get(s, a), mdp.reward(s, a));
            }
        }
    }

    #[test]
    fn constant_q_with_zero_reward_scales_by_gamma() {
        let mdp =
            TabularMdp::new(0.7, vec![vec![1], vec![0]], vec![vec![0.0], vec![0.0]], &[]).unwrap();
        let out = bellman_backup(&QFunction::constant(2, 1, 3.0), &mdp);
        assert!(out.values().iter().all(|&v| (v - 2.1).abs() < 1e-15));
    }

    #[test]
    fn two_backups_match_hand_iteration() {
        // Chain 0 -> 1 -> 1, rewards {1, 0}, gamma 0.5, one action.
        let mdp =
            TabularMdp::new(0.5, vec![vec![1], vec![1]], vec![vec![1.0], vec![0.0]], &[]).unwrap();
        let q2 = bellman_backup(&bellman_backup(&QFunction::zeros(2, 1), &mdp), &mdp);
        // Hand iteration: V1 = (1, 0); V2 = (1 + 0.5*0, 0 + 0.5*0) = (1, 0).
        let mut v = [0.0f64; 2];
        for _ in 0..2 {
            v = [1.0 + 0.5 * v[1], 0.0 + 0.5 * v[1]];
        }
        assert_eq!(q2.get(0, 0), v[0]);
        assert_eq!(q2.get(1, 0), v[1]);
    }

    #[test]
    fn self_loop_value_is_geometric_series() {
        let mdp = TabularMdp::new(0.9, vec![vec![0]], vec![vec![2.0]], &[]).unwrap();
        let q = solve_q_star(&mdp, DEFAULT_TOL).unwrap();
        assert!((q.get(0, 0) - 20.0).abs() < 1e-8);
    }

    #[test]
    fn absorbing_unsafe_value() {
        let mdp = two_state();
        let c = 3.0;
        let t = transform_terminal_cost(&mdp, c).unwrap();
        let q = solve_q_star(&t, DEFAULT_TOL).unwrap();
        for a in 0..2 {
            assert!((q.get(1, a) - (-c / (1.0 - 0.5))).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_tolerance_and_bad_mdps() {
        let mdp = two_state();
        assert!(solve_q_star(&mdp, 0.0).is_err());
        assert!(TabularMdp::new(1.0, vec![vec![0]], vec![vec![0.0]], &[]).is_err());
        assert!(TabularMdp::new(0.5, vec![vec![3]], vec![vec![0.0]], &[]).is_err());
        assert!(
            TabularMdp::with_bounds(0.5, vec![vec![0]], vec![vec![2.0]], &[], 0.0, 1.0).is_err()
        );
    }

    #[test]
    fn transform_without_unsafe_states_is_identity() {
        let mdp = TabularMdp::new(
            0.9,
            vec![vec![1, 0], vec![0, 1]],
            vec![vec![0.2, 0.5], vec![1.0, 0.0]],
            &[],
        )
        .unwrap();
        assert_eq!(transform_terminal_cost(&mdp, 5.0).unwrap(), mdp);
    }

    #[test]
    fn transform_makes_unsafe_absorbing() {
        let mdp = TabularMdp::new(
            0.9,
            vec![vec![1, 0], vec![0, 0]],
            vec![vec![0.2, 0.5], vec![1.0, 0.0]],
            &[1],
        )
        .unwrap();
        let t = transform_terminal_cost(&mdp, 3.0).unwrap();
        for a in 0..2 {
            assert_eq!(t.next(1, a), 1);
            assert_eq!(t.reward(1, a), -3.0);
            assert_eq!(t.next(0, a), mdp.next(0, a));
            assert_eq!(t.reward(0, a), mdp.reward(0, a));
        }
        assert_eq!(t.r_min(), -3.0);
        assert_eq!(t.r_max(), 1.0);
        let zero = transform_terminal_cost(&mdp, 0.0).unwrap();
        assert_eq!(zero.reward(1, 0), 0.0);
        assert_eq!(zero.next(1, 1), 1);
        assert!(transform_terminal_cost(&mdp, -1.0).is_err());
    }

    #[test]
    fn terminal_cost_arithmetic() {
        assert_eq!(compute_terminal_cost(0.0, 0.0, 0.9, 4, 1e-3).unwrap(), 1e-3);
        let c = compute_terminal_cost(0.0, 1.0, 0.5, 1, 1e-6).unwrap();
        assert!((c - (1.0 + 1e-6)).abs() < 1e-15);
        let b = terminal_cost_bound(0.0, 1.0, 0.99, 10).unwrap();
        assert!((b - (0.99f64.powi(-10) - 1.0)).abs() < 1e-15);
        assert!((b - 0.105_727_355).abs() < 1e-8);
        assert!(compute_terminal_cost(0.0, 1.0, 1.0, 1, 1e-6).is_err());
        assert!(compute_terminal_cost(0.0, 1.0, 0.0, 1, 1e-6).is_err());
        assert!(compute_terminal_cost(1.0, 0.0, 0.5, 1, 1e-6).is_err());
        assert!(compute_terminal_cost(0.0, 1.0, 0.5, 0, 1e-6).is_err());
        // Negative bounds clamp to zero before the margin.
        assert_eq!(compute_terminal_cost(5.0, 5.0, 0.9, 1, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn unsafe_return_bound_arithmetic() {
        let g: f64 = 0.8;
        assert!(
            (unsafe_return_upper_bound(0.0, 2.0, g, 3) - (-2.0 * g.powi(3) / (1.0 - g))).abs()
                < 1e-12
        );
        assert!((unsafe_return_upper_bound(1.0, 10.0, 0.9, 2) - (-79.1)).abs() < 1e-9);
        // At exactly the penalty bound the unsafe return meets the safe floor.
        let (r_min, r_max, gamma, h) = (-0.3, 1.7, 0.93, 4);
        let c = terminal_cost_bound(r_min, r_max, gamma, h).unwrap();
        let lhs = unsafe_return_upper_bound(r_max, c, gamma, h);
        assert!((lhs - r_min / (1.0 - gamma)).abs() < 1e-9);
    }

    #[test]
    fn classification_basics() {
        let mdp = two_state();
        assert_eq!(classify_state(&mdp, 1, 3), SafetyLabel::Violation);
        assert_eq!(classify_state(&mdp, 0, 3), SafetyLabel::Safe);
        // 0 -> 1 -> 2(unsafe) with a single action.
        let chain = TabularMdp::new(
            0.9,
            vec![vec![1], vec![2], vec![2]],
            vec![vec![0.0]; 3],
            &[2],
        )
        .unwrap();
        assert_eq!(
            classify_state(&chain, 0, 1),
            SafetyLabel::Irrecoverable {
                horizon_to_violation: 2
            }
        );
        assert_eq!(
            classify_state(&chain, 0, 5),
            SafetyLabel::Irrecoverable {
                horizon_to_violation: 2
            }
        );
        assert!(verify_horizon_assumption(&chain, 2).holds);
        assert_eq!(
            verify_horizon_assumption(&chain, 1).counterexamples,
            vec![0]
        );
    }

    #[test]
    fn json_roundtrip_and_field_names() {
        let mdp = two_state();
        let text = mdp.to_json().unwrap();
        for key in [
            "n_states",
            "n_actions",
            "gamma",
            "transition",
            "reward",
            "unsafe",
        ] {
            assert!(text.contains(&format!("\"{key}\"")), "missing {key}");
        }
        assert_eq!(TabularMdp::from_json(&text).unwrap(), mdp);
        let bare = r#"{"n_states":1,"n_actions":1,"gamma":0.5,"transition":[[0]],"reward":[[0.25]],"unsafe":[]}"#;
        let m = TabularMdp::from_json(bare).unwrap();
        assert_eq!((m.r_min(), m.r_max()), (0.25, 0.25));
        assert!(TabularMdp::from_json(r#"{"n_states":2,"n_actions":1,"gamma":0.5,"transition":[[0]],"reward":[[0.0]],"unsafe":[]}"#).is_err());
    }
}
