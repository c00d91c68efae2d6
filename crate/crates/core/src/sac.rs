//! Soft actor-critic with clipped double-Q, Polyak-averaged targets,
//! automatic entropy tuning and the constant target for unsafe successors.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::buffer::{Successor, Transition};
use crate::error::{Error, Result};
use crate::nn::{softplus, Adam, Mlp, Optimizer, OptimizerKind, Tape, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// TD target of the stored successor (a uniformly chosen member for
    /// model data), i.e. an unbiased draw of the member-average target.
    #[default]
    Average,
    /// Minimum TD target over every member's predicted successor.
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub critic_lr: f64,
    pub policy_lr: f64,
    pub alpha_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub init_alpha: f64,
    pub tune_alpha: bool,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub target_mode: TargetMode,
    pub optimizer: OptimizerKind,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            critic_lr: 3e-4,
            policy_lr: 1e-4,
            alpha_lr: 3e-4,
            tau: 0.005,
            batch_size: 256,
            init_alpha: 0.1,
            tune_alpha: true,
            target_entropy: None,
            target_mode: TargetMode::Average,
            optimizer: OptimizerKind::Adam,
            log_std_min: -5.0,
            log_std_max: 2.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("sac batch_size must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        if !(self.init_alpha > 0.0) || !(self.log_std_min < self.log_std_max) {
            return Err(Error::Config(
                "need init_alpha > 0 and log_std_min < log_std_max".into(),
            ));
        }
        if [self.critic_lr, self.policy_lr, self.alpha_lr]
            .iter()
            .any(|lr| !(*lr > 0.0))
        {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Maps raw observations and actions to network units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub obs_scale: Vec<f64>,
    pub act_low: Vec<f64>,
    pub act_high: Vec<f64>,
}

impl Scaling {
    pub fn obs_dim(&self) -> usize {
        self.obs_scale.len()
    }

    pub fn act_dim(&self) -> usize {
        self.act_low.len()
    }

    fn center(&self, i: usize) -> f64 {
        0.5 * (self.act_low[i] + self.act_high[i])
    }

    fn half(&self, i: usize) -> f64 {
        0.5 * (self.act_high[i] - self.act_low[i])
    }

    fn push_obs(&self, obs: &[f64], out: &mut Vec<f64>) {
        out.extend(obs.iter().zip(&self.obs_scale).map(|(o, s)| o / s));
    }

    fn push_action(&self, a: &[f64], out: &mut Vec<f64>) {
        out.extend(
            a.iter()
                .enumerate()
                .map(|(i, v)| (v - self.center(i)) / self.half(i)),
        );
    }

    /// Critic input rows `(scaled obs ⊕ normalized action)`.
    fn critic_inputs<'a>(
        &self,
        rows: impl Iterator<Item = (&'a [f64], &'a [f64])>,
    ) -> (Vec<f64>, usize) {
        let mut x = Vec::new();
        let mut n = 0;
        for (o, a) in rows {
            self.push_obs(o, &mut x);
            self.push_action(a, &mut x);
            n += 1;
        }
        (x, n)
    }
}

/// Tanh-squashed diagonal Gaussian policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub net: Mlp,
    pub scaling: Scaling,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Reparameterized samples for a batch, with everything the gradient needs.
#[derive(Debug, Clone)]
pub struct SquashedBatch {
    pub n: usize,
    /// Actions in environment units, row-major.
    pub actions: Vec<f64>,
    /// Actions in `[-1, 1]` (the tanh outputs).
    pub squashed: Vec<f64>,
    pub log_probs: Vec<f64>,
    eps: Vec<f64>,
    std: Vec<f64>,
    dls_draw: Vec<f64>,
    tape: Tape,
}

impl Policy {
    pub fn new(
        scaling: Scaling,
        hidden: &[usize],
        log_std_min: f64,
        log_std_max: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let net = Mlp::new(
            Topology::new(scaling.obs_dim(), hidden, 2 * scaling.act_dim()),
            rng,
        )?;
        Ok(Self {
            net,
            scaling,
            log_std_min,
            log_std_max,
        })
    }

    pub fn act_dim(&self) -> usize {
        self.scaling.act_dim()
    }

    fn obs_inputs<'a>(&self, obs: impl Iterator<Item = &'a [f64]>) -> (Vec<f64>, usize) {
        let mut x = Vec::new();
        let mut n = 0;
        for o in obs {
            self.scaling.push_obs(o, &mut x);
            n += 1;
        }
        (x, n)
    }

    /// Samples `a = center + half·tanh(μ + σ·ε)` for the given standard
    /// normal draws `eps` (row-major, `n × act_dim`).
    pub fn sample_with<'a>(
        &self,
        obs: impl Iterator<Item = &'a [f64]>,
        eps: &[f64],
    ) -> SquashedBatch {
        let (x, n) = self.obs_inputs(obs);
        let d = self.act_dim();
        assert_eq!(eps.len(), n * d, "noise shape");
        let tape = self.net.forward_tape(&x, n);
        let out = tape.output();
        let (lo, hi) = (self.log_std_min, self.log_std_max);
        let mut actions = Vec::with_capacity(n * d);
        let mut squashed = Vec::with_capacity(n * d);
        let mut std = Vec::with_capacity(n * d);
        let mut dls_draw = Vec::with_capacity(n * d);
        let mut log_probs = vec![0.0; n];
        for b in 0..n {
            for i in 0..d {
                let mean = out[b * 2 * d + i];
                let raw = out[b * 2 * d + d + i];
                let th = raw.tanh();
                let ls = lo + 0.5 * (hi - lo) * (th + 1.0);
                let sigma = ls.exp();
                let e = eps[b * d + i];
                let u = mean + sigma * e;
                let t = u.tanh();
                // ln(1 − tanh²u) = 2(ln 2 − u − softplus(−2u))
                let log_jac = 2.0 * (LN_2 - u - softplus(-2.0 * u));
                log_probs[b] +=
                    -0.5 * e * e - ls - 0.5 * (2.0 * PI).ln() - self.scaling.half(i).ln() - log_jac;
                squashed.push(t);
                actions.push(
                    (self.scaling.center(i) + self.scaling.half(i) * t)
                        .clamp(self.scaling.act_low[i], self.scaling.act_high[i]),
                );
                std.push(sigma);
                dls_draw.push(0.5 * (hi - lo) * (1.0 - th * th));
            }
        }
        SquashedBatch {
            n,
            actions,
            squashed,
            log_probs,
            eps: eps.to_vec(),
            std,
            dls_draw,
            tape,
        }
    }

    pub fn sample<'a, I>(&self, obs: I, rng: &mut ChaCha8Rng) -> SquashedBatch
    where
        I: ExactSizeIterator<Item = &'a [f64]>,
    {
        let eps: Vec<f64> = (0..obs.len() * self.act_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.sample_with(obs, &eps)
    }

    /// One sampled action and its log-density.
    pub fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let s = self.sample(std::iter::once(obs), rng);
        (s.actions, s.log_probs[0])
    }

    /// The squashed mean action.
    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        let eps = vec![0.0; self.act_dim()];
        self.sample_with(std::iter::once(obs), &eps).actions
    }

    /// Pre-squash mean and log standard deviation at one observation.
    pub fn distribution(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (x, _) = self.obs_inputs(std::iter::once(obs));
        let out = self.net.forward(&x, 1);
        let d = self.act_dim();
        let (lo, hi) = (self.log_std_min, self.log_std_max);
        let ls = out[d..]
            .iter()
            .map(|r| lo + 0.5 * (hi - lo) * (r.tanh() + 1.0))
            .collect();
        (out[..d].to_vec(), ls)
    }
}

/// Twin Q networks and their target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub scaling: Scaling,
    opt1: Optimizer,
    opt2: Optimizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriticDoc {
    q1: Mlp,
    q2: Mlp,
    target1: Mlp,
    target2: Mlp,
    scaling: Scaling,
}

impl Critic {
    pub fn new(
        scaling: Scaling,
        hidden: &[usize],
        optimizer: OptimizerKind,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let topo = Topology::new(scaling.obs_dim() + scaling.act_dim(), hidden, 1);
        let q1 = Mlp::new(topo.clone(), rng)?;
        let q2 = Mlp::new(topo, rng)?;
        let opt1 = Optimizer::new(optimizer, q1.n_params(), lr);
        let opt2 = Optimizer::new(optimizer, q2.n_params(), lr);
        Ok(Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
            scaling,
            opt1,
            opt2,
        })
    }

    /// `min(Q̄₁, Q̄₂)` at each `(obs, action)` row.
    pub fn target_min<'a>(&self, rows: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> Vec<f64> {
        let (x, n) = self.scaling.critic_inputs(rows);
        let a = self.target1.forward(&x, n);
        let b = self.target2.forward(&x, n);
        a.iter().zip(&b).map(|(a, b)| a.min(*b)).collect()
    }

    /// Online `(Q₁, Q₂)` at each row.
    pub fn online<'a>(
        &self,
        rows: impl Iterator<Item = (&'a [f64], &'a [f64])>,
    ) -> (Vec<f64>, Vec<f64>) {
        let (x, n) = self.scaling.critic_inputs(rows);
        (self.q1.forward(&x, n), self.q2.forward(&x, n))
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt1.set_lr(lr);
        self.opt2.set_lr(lr);
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CriticDoc {
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            target1: self.target1.clone(),
            target2: self.target2.clone(),
            scaling: self.scaling.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Restores networks; optimizer state starts fresh.
    pub fn from_json(text: &str, optimizer: OptimizerKind, lr: f64) -> Result<Self> {
        let doc: CriticDoc = serde_json::from_str(text)?;
        let opt1 = Optimizer::new(optimizer, doc.q1.n_params(), lr);
        let opt2 = Optimizer::new(optimizer, doc.q2.n_params(), lr);
        Ok(Self {
            q1: doc.q1,
            q2: doc.q2,
            target1: doc.target1,
            target2: doc.target2,
            scaling: doc.scaling,
            opt1,
            opt2,
        })
    }
}

/// Per-sample TD targets.
///
/// Unsafe successors get `r + γ·(−C/(1−γ))`; the others get
/// `r + γ·(min(Q̄₁, Q̄₂)(s′, a′) − α·log π(a′|s′))` with `a′ ∼ π(s′)`. With
/// `rng = None` the policy's mean action is used (noise fixed at zero).
pub fn critic_target(
    batch: &[&Transition],
    policy: &Policy,
    critic: &Critic,
    c: f64,
    gamma: f64,
    alpha: f64,
    mode: TargetMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Vec<f64> {
    let terminal = -c / (1.0 - gamma);
    // Flatten each sample's successors so the networks see one batch.
    let mut owner = Vec::new();
    let mut succ: Vec<(&[f64], f64, bool)> = Vec::new();
    for (k, t) in batch.iter().enumerate() {
        if mode == TargetMode::Min && !t.alternatives.is_empty() {
            for Successor {
                next_obs,
                reward,
                unsafe_next,
            } in &t.alternatives
            {
                owner.push(k);
                succ.push((next_obs, *reward, *unsafe_next));
            }
        } else {
            owner.push(k);
            succ.push((&t.next_obs, t.reward, t.unsafe_next));
        }
    }
    let live: Vec<usize> = (0..succ.len()).filter(|&j| !succ[j].2).collect();
    let mut values = vec![0.0; succ.len()];
    if !live.is_empty() {
        let obs = live.iter().map(|&j| succ[j].0);
        let sample = match rng {
            Some(r) => policy.sample(obs, r),
            None => policy.sample_with(obs, &vec![0.0; live.len() * policy.act_dim()]),
        };
        let d = policy.act_dim();
        let q = critic.target_min(
            live.iter()
                .enumerate()
                .map(|(i, &j)| (succ[j].0, &sample.actions[i * d..(i + 1) * d])),
        );
        for (i, &j) in live.iter().enumerate() {
            values[j] = q[i] - alpha * sample.log_probs[i];
        }
    }
    let mut targets = vec![f64::INFINITY; batch.len()];
    for (j, &(_, r, unsafe_next)) in succ.iter().enumerate() {
        let v = if unsafe_next { terminal } else { values[j] };
        let y = r + gamma * v;
        let slot = &mut targets[owner[j]];
        *slot = slot.min(y);
    }
    targets
}

/// `mean (Q(x) − y)²` for one Q network and its parameter gradient.
pub fn critic_loss_and_grad(net: &Mlp, inputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = targets.len();
    let tape = net.forward_tape(inputs, n);
    let q = tape.output();
    let mut loss = 0.0;
    let mut g_out = vec![0.0; n];
    for i in 0..n {
        let e = q[i] - targets[i];
        loss += e * e;
        g_out[i] = 2.0 * e / n as f64;
    }
    let mut grad = vec![0.0; net.n_params()];
    net.backward(&tape, &g_out, &mut grad);
    (loss / n as f64, grad)
}

/// One gradient step on the summed squared error of both online critics
/// against shared targets. Returns the loss before the step.
pub fn critic_update(critic: &mut Critic, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
    let (x, _) = critic.scaling.critic_inputs(
        batch
            .iter()
            .map(|t| (t.obs.as_slice(), t.action.as_slice())),
    );
    let (l1, g1) = critic_loss_and_grad(&critic.q1, &x, targets);
    let (l2, g2) = critic_loss_and_grad(&critic.q2, &x, targets);
    let loss = l1 + l2;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: "critic".into(),
            value: loss,
        });
    }
    critic.opt1.step(critic.q1.params_mut(), &g1);
    critic.opt2.step(critic.q2.params_mut(), &g2);
    Ok(loss)
}

/// Policy objective `mean(α·log π(a|s) − min(Q₁, Q₂)(s, a))` on
/// reparameterized samples, with its gradient in the policy parameters.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub log_probs: Vec<f64>,
}

pub fn policy_loss_and_grad<'a>(
    policy: &Policy,
    critic: &Critic,
    obs: &[&'a [f64]],
    eps: &[f64],
    alpha: f64,
) -> PolicyEval {
    let s = policy.sample_with(obs.iter().copied(), eps);
    let (n, d) = (s.n, policy.act_dim());
    let (x, _) = critic.scaling.critic_inputs(
        obs.iter()
            .enumerate()
            .map(|(b, o)| (*o, &s.actions[b * d..(b + 1) * d])),
    );
    let t1 = critic.q1.forward_tape(&x, n);
    let t2 = critic.q2.forward_tape(&x, n);
    let (q1, q2) = (t1.output(), t2.output());
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let mut loss = 0.0;
    for b in 0..n {
        let q = q1[b].min(q2[b]);
        loss += alpha * s.log_probs[b] - q;
        if q1[b] <= q2[b] {
            g1[b] = -1.0 / n as f64;
        } else {
            g2[b] = -1.0 / n as f64;
        }
    }
    // Critic parameters stay frozen; only the input gradients are used.
    let mut scratch = vec![0.0; critic.q1.n_params()];
    let gx1 = critic.q1.backward(&t1, &g1, &mut scratch);
    let gx2 = critic.q2.backward(&t2, &g2, &mut scratch);
    let width = critic.scaling.obs_dim() + d;
    let obs_dim = critic.scaling.obs_dim();
    let mut g_out = vec![0.0; n * 2 * d];
    for b in 0..n {
        for i in 0..d {
            let k = b * d + i;
            let t = s.squashed[k];
            // d(−mean Q)/d(normalized action) = d(−mean Q)/d tanh(u)
            let gq = gx1[b * width + obs_dim + i] + gx2[b * width + obs_dim + i];
            let du = alpha * 2.0 * t / n as f64 + gq * (1.0 - t * t);
            let dls = -alpha / n as f64 + du * s.std[k] * s.eps[k];
            g_out[b * 2 * d + i] = du;
            g_out[b * 2 * d + d + i] = dls * s.dls_draw[k];
        }
    }
    let mut grad = vec![0.0; policy.net.n_params()];
    policy.net.backward(&s.tape, &g_out, &mut grad);
    PolicyEval {
        loss: loss / n as f64,
        grad,
        log_probs: s.log_probs,
    }
}

/// One policy step with the critic frozen. Returns the loss and the batch
/// log-densities (for entropy tuning).
pub fn policy_update(
    policy: &mut Policy,
    optimizer: &mut Optimizer,
    critic: &Critic,
    obs: &[&[f64]],
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let eps: Vec<f64> = (0..obs.len() * policy.act_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let eval = policy_loss_and_grad(policy, critic, obs, &eps, alpha);
    if !eval.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: "policy".into(),
            value: eval.loss,
        });
    }
    optimizer.step(policy.net.params_mut(), &eval.grad);
    Ok((eval.loss, eval.log_probs))
}

/// `ψ̄ ← τψ + (1 − τ)ψ̄` for both target copies.
pub fn target_update(critic: &mut Critic, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in (0, 1], got {tau}"
        )));
    }
    critic.target1.soft_update_from(&critic.q1, tau);
    critic.target2.soft_update_from(&critic.q2, tau);
    Ok(())
}

/// Entropy temperature, stored as `ln α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCoef {
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub tunable: bool,
    optimizer: Adam,
}

impl EntropyCoef {
    pub fn new(alpha: f64, target_entropy: f64, tunable: bool, lr: f64) -> Self {
        Self {
            log_alpha: alpha.ln(),
            target_entropy,
            tunable,
            optimizer: Adam::new(1, lr),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Dual objective `−α·mean(log π + H̄)` and its derivative in `ln α`.
    pub fn loss_and_grad(&self, log_probs: &[f64]) -> (f64, f64) {
        let gap = log_probs
            .iter()
            .map(|lp| lp + self.target_entropy)
            .sum::<f64>()
            / log_probs.len() as f64;
        let loss = -self.alpha() * gap;
        (loss, loss)
    }

    /// One step on the dual objective; α rises when the batch entropy is
    /// below target. Returns the new α.
    pub fn tune(&mut self, log_probs: &[f64], lr: f64) -> f64 {
        if self.tunable && !log_probs.is_empty() {
            let (_, g) = self.loss_and_grad(log_probs);
            self.optimizer.lr = lr;
            let mut p = [self.log_alpha];
            self.optimizer.step(&mut p, &[g]);
            self.log_alpha = p[0];
        }
        self.alpha()
    }
}

/// Losses and temperature after one full update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
}

/// Policy, critic and temperature with their optimizers.
#[derive(Debug, Clone)]
pub struct Sac {
    pub config: SacConfig,
    pub policy: Policy,
    pub critic: Critic,
    pub entropy: EntropyCoef,
    policy_opt: Optimizer,
}

impl Sac {
    pub fn new(config: SacConfig, scaling: Scaling, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let policy = Policy::new(
            scaling.clone(),
            &config.hidden,
            config.log_std_min,
            config.log_std_max,
            rng,
        )?;
        let critic = Critic::new(
            scaling.clone(),
            &config.hidden,
            config.optimizer,
            config.critic_lr,
            rng,
        )?;
        let target = config.target_entropy.unwrap_or(-(scaling.act_dim() as f64));
        let entropy = EntropyCoef::new(
            config.init_alpha,
            target,
            config.tune_alpha,
            config.alpha_lr,
        );
        let policy_opt = Optimizer::new(config.optimizer, policy.net.n_params(), config.policy_lr);
        Ok(Self {
            config,
            policy,
            critic,
            entropy,
            policy_opt,
        })
    }

    /// Critic step, policy step, temperature step, then target averaging.
    pub fn update(
        &mut self,
        batch: &[&Transition],
        c: f64,
        gamma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateStats> {
        let alpha = self.entropy.alpha();
        let targets = critic_target(
            batch,
            &self.policy,
            &self.critic,
            c,
            gamma,
            alpha,
            self.config.target_mode,
            Some(&mut *rng),
        );
        let critic_loss = critic_update(&mut self.critic, batch, &targets)?;
        let obs: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
        let (policy_loss, log_probs) = policy_update(
            &mut self.policy,
            &mut self.policy_opt,
            &self.critic,
            &obs,
            alpha,
            rng,
        )?;
        let alpha = self.entropy.tune(&log_probs, self.config.alpha_lr);
        target_update(&mut self.critic, self.config.tau)?;
        Ok(UpdateStats {
            critic_loss,
            policy_loss,
            alpha,
        })
    }
}
