//! Ensembles of diagonal-Gaussian dynamics models trained by maximum
//! likelihood, and the oracle stand-in that uses the true dynamics.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::buffer::{ReplayBuffer, Transition};
use crate::envs::Task;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, Activation, Adam, Mlp, Tape, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// Draw from the member's Gaussian.
    #[default]
    Sample,
    /// Use the member's mean.
    Mean,
}

/// Predicted outcome of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub next: Vec<f64>,
    pub reward: f64,
}

/// Anything that can stand in for the environment during model rollouts.
pub trait TransitionModel {
    /// Refits on the real data; returns the mean NLL when the model has one.
    fn fit(&mut self, data: &ReplayBuffer) -> Result<Option<f64>>;

    /// One step for each `(state, action)` pair, each through a uniformly
    /// chosen member.
    fn step_batch(
        &self,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
        rng: &mut ChaCha8Rng,
        mode: PredictionMode,
    ) -> Vec<Prediction>;

    /// One prediction per member from the member means.
    fn predict_set(&self, state: &[f64], action: &[f64]) -> Vec<Prediction>;

    /// Serialized parameters, for models that have any.
    fn checkpoint(&self) -> Result<Option<String>> {
        Ok(None)
    }
}

/// Exact dynamics wrapped as a one-member model.
#[derive(Debug, Clone)]
pub struct OracleDynamics {
    task: Arc<dyn Task>,
}

impl OracleDynamics {
    pub fn new(task: Arc<dyn Task>) -> Self {
        Self { task }
    }

    fn predict(&self, state: &[f64], action: &[f64]) -> Prediction {
        let (next, reward) = self
            .task
            .transition(state, action)
            .expect("policy actions are in range");
        Prediction { next, reward }
    }
}

impl TransitionModel for OracleDynamics {
    fn fit(&mut self, _data: &ReplayBuffer) -> Result<Option<f64>> {
        Ok(None)
    }

    fn step_batch(
        &self,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
        _rng: &mut ChaCha8Rng,
        _mode: PredictionMode,
    ) -> Vec<Prediction> {
        states
            .iter()
            .zip(actions)
            .map(|(s, a)| self.predict(s, a))
            .collect()
    }

    fn predict_set(&self, state: &[f64], action: &[f64]) -> Vec<Prediction> {
        vec![self.predict(state, action)]
    }
}

/// Running per-coordinate mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn observe(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population standard deviation, floored at 1e-6; 1 before two samples.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|s| (s / self.count as f64).sqrt().max(1e-6))
            .collect()
    }

    pub fn normalize_into(&self, x: &[f64], std: &[f64], out: &mut Vec<f64>) {
        out.extend(
            x.iter()
                .zip(&self.mean)
                .zip(std)
                .map(|((v, m), s)| (v - m) / s),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub head_hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Minibatch steps per member per refit.
    pub train_steps: usize,
    pub logvar_min: f64,
    pub logvar_max: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![64, 64],
            head_hidden: 64,
            lr: 1e-3,
            batch_size: 256,
            train_steps: 200,
            logvar_min: -10.0,
            logvar_max: 4.0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0
            || self.batch_size == 0
            || self.hidden.is_empty()
            || self.head_hidden == 0
        {
            return Err(Error::Config(
                "ensemble needs members, hidden layers and a batch size".into(),
            ));
        }
        if !(self.logvar_min < self.logvar_max) || !(self.lr > 0.0) {
            return Err(Error::Config(
                "ensemble needs logvar_min < logvar_max and lr > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Soft clamp into `(lo, hi)` and its derivative.
fn soft_clamp(raw: f64, lo: f64, hi: f64) -> (f64, f64) {
    let upper = hi - softplus(hi - raw);
    // The lower softplus can overshoot `hi` by about e^-(hi - lo); clip that.
    let value = (lo + softplus(upper - lo)).clamp(lo, hi);
    (value, sigmoid(hi - raw) * sigmoid(upper - lo))
}

/// Trunk plus mean and log-variance heads over `(state ⊕ action)`,
/// predicting `(state delta ⊕ reward)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMember {
    pub trunk: Mlp,
    pub mean_head: Mlp,
    pub logvar_head: Mlp,
    pub logvar_min: f64,
    pub logvar_max: f64,
}

struct MemberTape {
    trunk: Tape,
    mean: Tape,
    logvar: Tape,
}

/// Output of a member on a batch.
pub struct MemberOutput {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
    dlogvar_draw: Vec<f64>,
    tape: MemberTape,
}

impl GaussianMember {
    pub fn new<R: Rng + ?Sized>(
        n_in: usize,
        n_out: usize,
        cfg: &EnsembleConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let width = *cfg.hidden.last().expect("validated");
        let trunk = Mlp::new(
            Topology::new(n_in, &cfg.hidden[..cfg.hidden.len() - 1], width)
                .with_output(Activation::Relu),
            rng,
        )?;
        let mean_head = Mlp::new(Topology::new(width, &[cfg.head_hidden], n_out), rng)?;
        let logvar_head = Mlp::new(Topology::new(width, &[cfg.head_hidden], n_out), rng)?;
        Ok(Self {
            trunk,
            mean_head,
            logvar_head,
            logvar_min: cfg.logvar_min,
            logvar_max: cfg.logvar_max,
        })
    }

    pub fn n_params(&self) -> usize {
        self.trunk.n_params() + self.mean_head.n_params() + self.logvar_head.n_params()
    }

    pub fn n_outputs(&self) -> usize {
        self.mean_head.n_outputs()
    }

    pub fn params(&self) -> Vec<f64> {
        [
            self.trunk.params(),
            self.mean_head.params(),
            self.logvar_head.params(),
        ]
        .concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.trunk.n_params());
        let (b, c) = rest.split_at(self.mean_head.n_params());
        self.trunk.params_mut().copy_from_slice(a);
        self.mean_head.params_mut().copy_from_slice(b);
        self.logvar_head.params_mut().copy_from_slice(c);
    }

    /// Forward pass on normalized inputs.
    pub fn forward(&self, x: &[f64], batch: usize) -> MemberOutput {
        let trunk = self.trunk.forward_tape(x, batch);
        let mean = self.mean_head.forward_tape(trunk.output(), batch);
        let logvar = self.logvar_head.forward_tape(trunk.output(), batch);
        let (lv, dlv): (Vec<f64>, Vec<f64>) = logvar
            .output()
            .iter()
            .map(|&r| soft_clamp(r, self.logvar_min, self.logvar_max))
            .unzip();
        MemberOutput {
            mean: mean.output().to_vec(),
            logvar: lv,
            dlogvar_draw: dlv,
            tape: MemberTape {
                trunk,
                mean,
                logvar,
            },
        }
    }

    /// Mean Gaussian negative log-likelihood of `targets` over batch and
    /// output coordinates, with its parameter gradient.
    pub fn nll_and_grad(&self, x: &[f64], targets: &[f64], batch: usize) -> (f64, Vec<f64>) {
        let out = self.forward(x, batch);
        let n = (batch * self.n_outputs()) as f64;
        let mut loss = 0.0;
        let mut g_mean = vec![0.0; out.mean.len()];
        let mut g_lv = vec![0.0; out.mean.len()];
        for i in 0..out.mean.len() {
            let err = out.mean[i] - targets[i];
            let inv_var = (-out.logvar[i]).exp();
            loss += 0.5 * (err * err * inv_var + out.logvar[i] + (2.0 * PI).ln());
            g_mean[i] = err * inv_var / n;
            g_lv[i] = 0.5 * (1.0 - err * err * inv_var) * out.dlogvar_draw[i] / n;
        }
        let mut grad = vec![0.0; self.n_params()];
        let (gt, rest) = grad.split_at_mut(self.trunk.n_params());
        let (gm, gl) = rest.split_at_mut(self.mean_head.n_params());
        let mut g_trunk = self.mean_head.backward(&out.tape.mean, &g_mean, gm);
        let g2 = self.logvar_head.backward(&out.tape.logvar, &g_lv, gl);
        g_trunk.iter_mut().zip(g2).for_each(|(a, b)| *a += b);
        self.trunk.backward(&out.tape.trunk, &g_trunk, gt);
        (loss / n, grad)
    }

    pub fn nll(&self, x: &[f64], targets: &[f64], batch: usize) -> f64 {
        let out = self.forward(x, batch);
        let n = (batch * self.n_outputs()) as f64;
        out.mean
            .iter()
            .zip(&out.logvar)
            .zip(targets)
            .map(|((m, lv), y)| 0.5 * ((m - y) * (m - y) * (-lv).exp() + lv + (2.0 * PI).ln()))
            .sum::<f64>()
            / n
    }
}

/// Per-member mean NLL over the whole buffer after a refit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub member_nll: Vec<f64>,
}

impl TrainReport {
    pub fn mean_nll(&self) -> f64 {
        self.member_nll.iter().sum::<f64>() / self.member_nll.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDynamics {
    obs_dim: usize,
    act_dim: usize,
    config: EnsembleConfig,
    members: Vec<GaussianMember>,
    optimizers: Vec<Adam>,
    /// Minibatch-order streams, one per member.
    shuffles: Vec<ChaCha8Rng>,
    normalizer: Normalizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleDoc {
    obs_dim: usize,
    act_dim: usize,
    config: EnsembleConfig,
    normalizer: Normalizer,
    members: Vec<GaussianMember>,
}

impl EnsembleDynamics {
    pub fn new(obs_dim: usize, act_dim: usize, config: EnsembleConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut members = Vec::with_capacity(config.members);
        let mut shuffles = Vec::with_capacity(config.members);
        for i in 0..config.members as u64 {
            let mut init = ChaCha8Rng::seed_from_u64(seed);
            init.set_stream(2 * i);
            members.push(GaussianMember::new(
                obs_dim + act_dim,
                obs_dim + 1,
                &config,
                &mut init,
            )?);
            let mut order = ChaCha8Rng::seed_from_u64(seed);
            order.set_stream(2 * i + 1);
            shuffles.push(order);
        }
        let optimizers = members
            .iter()
            .map(|m| Adam::new(m.n_params(), config.lr))
            .collect();
        Ok(Self {
            obs_dim,
            act_dim,
            config,
            members,
            optimizers,
            shuffles,
            normalizer: Normalizer::new(obs_dim + act_dim),
        })
    }

    pub fn members(&self) -> &[GaussianMember] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [GaussianMember] {
        &mut self.members
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    fn encode_inputs<'a>(
        &self,
        pairs: impl Iterator<Item = (&'a [f64], &'a [f64])>,
    ) -> (Vec<f64>, usize) {
        let std = self.normalizer.std();
        let mut x = Vec::new();
        let mut n = 0;
        let mut row = Vec::with_capacity(self.obs_dim + self.act_dim);
        for (s, a) in pairs {
            row.clear();
            row.extend_from_slice(s);
            row.extend_from_slice(a);
            self.normalizer.normalize_into(&row, &std, &mut x);
            n += 1;
        }
        (x, n)
    }

    fn targets(t: &Transition) -> impl Iterator<Item = f64> + '_ {
        t.next_obs
            .iter()
            .zip(&t.obs)
            .map(|(n, s)| n - s)
            .chain(std::iter::once(t.reward))
    }

    /// Refits the input normalizer on the buffer, then runs `steps`
    /// minibatch steps per member over each member's own shuffled order.
    pub fn train_epoch(
        &mut self,
        buffer: &ReplayBuffer,
        steps: usize,
        lr: f64,
    ) -> Result<TrainReport> {
        if buffer.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot fit dynamics on an empty buffer".into(),
            ));
        }
        self.normalizer = Normalizer::new(self.obs_dim + self.act_dim);
        for t in buffer.iter() {
            let row: Vec<f64> = t.obs.iter().chain(&t.action).copied().collect();
            self.normalizer.observe(&row);
        }
        let data: Vec<&Transition> = buffer.iter().collect();
        let (x_all, n) =
            self.encode_inputs(data.iter().map(|t| (t.obs.as_slice(), t.action.as_slice())));
        let y_all: Vec<f64> = data.iter().flat_map(|t| Self::targets(t)).collect();
        let (d_in, d_out) = (self.obs_dim + self.act_dim, self.obs_dim + 1);
        let batch = self.config.batch_size.min(n);
        let mut report = Vec::with_capacity(self.members.len());
        for (k, member) in self.members.iter_mut().enumerate() {
            let opt = &mut self.optimizers[k];
            opt.lr = lr;
            let rng = &mut self.shuffles[k];
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut pos = 0;
            let mut xb = Vec::with_capacity(batch * d_in);
            let mut yb = Vec::with_capacity(batch * d_out);
            for _ in 0..steps {
                if pos + batch > n {
                    order.shuffle(rng);
                    pos = 0;
                }
                xb.clear();
                yb.clear();
                for &i in &order[pos..pos + batch] {
                    xb.extend_from_slice(&x_all[i * d_in..(i + 1) * d_in]);
                    yb.extend_from_slice(&y_all[i * d_out..(i + 1) * d_out]);
                }
                pos += batch;
                let (loss, grad) = member.nll_and_grad(&xb, &yb, batch);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        context: format!("dynamics member {k}"),
                        value: loss,
                    });
                }
                let mut p = member.params();
                opt.step(&mut p, &grad);
                member.set_params(&p);
            }
            let nll = member.nll(&x_all, &y_all, n);
            if !nll.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("dynamics member {k} evaluation"),
                    value: nll,
                });
            }
            report.push(nll);
        }
        Ok(TrainReport { member_nll: report })
    }

    /// Mean NLL of each member on arbitrary transitions.
    pub fn evaluate_nll(&self, data: &[Transition]) -> Vec<f64> {
        let (x, n) =
            self.encode_inputs(data.iter().map(|t| (t.obs.as_slice(), t.action.as_slice())));
        let y: Vec<f64> = data.iter().flat_map(Self::targets).collect();
        self.members.iter().map(|m| m.nll(&x, &y, n)).collect()
    }

    fn decode(&self, state: &[f64], out: &[f64]) -> Prediction {
        let next = state
            .iter()
            .zip(&out[..self.obs_dim])
            .map(|(s, d)| s + d)
            .collect();
        Prediction {
            next,
            reward: out[self.obs_dim],
        }
    }

    /// Mean prediction of one member.
    pub fn member_mean(&self, member: usize, state: &[f64], action: &[f64]) -> Prediction {
        let (x, _) = self.encode_inputs(std::iter::once((state, action)));
        let out = self.members[member].forward(&x, 1);
        self.decode(state, &out.mean)
    }

    /// Per-member mean variance of the predicted outputs at one input.
    pub fn member_variance(&self, member: usize, state: &[f64], action: &[f64]) -> Vec<f64> {
        let (x, _) = self.encode_inputs(std::iter::once((state, action)));
        self.members[member]
            .forward(&x, 1)
            .logvar
            .iter()
            .map(|lv| lv.exp())
            .collect()
    }

    /// Fraction of transitions whose true next state lies inside the
    /// bounding box of the member means.
    pub fn calibration_rate(&self, data: &[Transition]) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let inside = data
            .iter()
            .filter(|t| {
                let set = self.predict_set(&t.obs, &t.action);
                (0..self.obs_dim).all(|i| {
                    let lo = set.iter().map(|p| p.next[i]).fold(f64::INFINITY, f64::min);
                    let hi = set
                        .iter()
                        .map(|p| p.next[i])
                        .fold(f64::NEG_INFINITY, f64::max);
                    lo <= t.next_obs[i] && t.next_obs[i] <= hi
                })
            })
            .count();
        inside as f64 / data.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = EnsembleDoc {
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            members: self.members.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Restores a checkpoint for prediction. Optimizer moments and minibatch
    /// streams are reinitialized from `seed`.
    pub fn from_json(text: &str, seed: u64) -> Result<Self> {
        let doc: EnsembleDoc = serde_json::from_str(text)?;
        let mut e = Self::new(doc.obs_dim, doc.act_dim, doc.config, seed)?;
        if doc.members.len() != e.members.len() {
            return Err(Error::Checkpoint(
                "member count does not match config".into(),
            ));
        }
        for (a, b) in e.members.iter().zip(&doc.members) {
            if a.n_params() != b.n_params() {
                return Err(Error::Checkpoint(
                    "member topology does not match config".into(),
                ));
            }
        }
        e.members = doc.members;
        e.normalizer = doc.normalizer;
        Ok(e)
    }
}

impl TransitionModel for EnsembleDynamics {
    fn fit(&mut self, data: &ReplayBuffer) -> Result<Option<f64>> {
        let report = self.train_epoch(data, self.config.train_steps, self.config.lr)?;
        Ok(Some(report.mean_nll()))
    }

    fn step_batch(
        &self,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
        rng: &mut ChaCha8Rng,
        mode: PredictionMode,
    ) -> Vec<Prediction> {
        let picks: Vec<usize> = states
            .iter()
            .map(|_| rng.random_range(0..self.members.len()))
            .collect();
        let mut out = vec![None; states.len()];
        // Batch the forward passes per member, then fill in draw order.
        let mut raw: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; states.len()];
        for (k, member) in self.members.iter().enumerate() {
            let idx: Vec<usize> = (0..states.len()).filter(|&i| picks[i] == k).collect();
            if idx.is_empty() {
                continue;
            }
            let (x, n) = self.encode_inputs(
                idx.iter()
                    .map(|&i| (states[i].as_slice(), actions[i].as_slice())),
            );
            let o = member.forward(&x, n);
            let d = self.obs_dim + 1;
            for (j, &i) in idx.iter().enumerate() {
                raw[i] = Some((
                    o.mean[j * d..(j + 1) * d].to_vec(),
                    o.logvar[j * d..(j + 1) * d].to_vec(),
                ));
            }
        }
        for (i, r) in raw.into_iter().enumerate() {
            let (mut mean, logvar) = r.expect("every input assigned to a member");
            if mode == PredictionMode::Sample {
                for (m, lv) in mean.iter_mut().zip(&logvar) {
                    let z: f64 = rng.sample(StandardNormal);
                    *m += (0.5 * lv).exp() * z;
                }
            }
            out[i] = Some(self.decode(&states[i], &mean));
        }
        out.into_iter().map(|p| p.expect("filled")).collect()
    }

    fn predict_set(&self, state: &[f64], action: &[f64]) -> Vec<Prediction> {
        let mut set: Vec<Prediction> = Vec::with_capacity(self.members.len());
        for k in 0..self.members.len() {
            let p = self.member_mean(k, state, action);
            let dup = set.iter().any(|q| {
                q.reward.to_bits() == p.reward.to_bits()
                    && q.next
                        .iter()
                        .zip(&p.next)
                        .all(|(a, b)| a.to_bits() == b.to_bits())
            });
            if !dup {
                set.push(p);
            }
        }
        set
    }

    fn checkpoint(&self) -> Result<Option<String>> {
        self.to_json().map(Some)
    }
}
