//! Soft actor-critic with twin critics, a tanh-squashed Gaussian actor and a
//! fixed entropy coefficient.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nn::{Adam, Mlp};
use super::replay::{Batch, ReplayBuffer};
use super::Policy;
use crate::env::{Action, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub entropy_coef: f64,
    /// Gradient updates per batch tick of the worker set.
    pub train_ratio: usize,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub stack_len: usize,
    /// Translations enter the networks as `sign(t)·ln(1 + |t|/scale)`, so
    /// millimetre offsets stay resolvable next to decimetre ones. Meters.
    pub translation_scale: f64,
    pub log_std_range: [f64; 2],
    /// Multiplies env rewards inside the TD target; the inverse temperature
    /// relative to `entropy_coef`.
    pub reward_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        super::presets::sac_desk()
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty and positive");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        if !(self.learning_rate > 0.0 && self.entropy_coef >= 0.0 && self.tau > 0.0 && self.tau <= 1.0) {
            return bad("learning_rate, entropy_coef and tau must be positive (tau ≤ 1)");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.train_ratio == 0 || self.buffer_capacity == 0 || self.stack_len == 0 {
            return bad("batch_size, train_ratio, buffer_capacity and stack_len must be positive");
        }
        if !(self.translation_scale > 0.0 && self.log_std_range[0] < self.log_std_range[1]) {
            return bad("translation_scale must be positive and log_std_range ordered");
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.stack_len * OBS_DIM
    }
}

/// Log-compresses the translation entries of a stacked observation.
pub fn normalize_observation(stacked: &[f64], translation_scale: f64, out: &mut Vec<f64>) {
    for frame in stacked.chunks(OBS_DIM) {
        for (i, &v) in frame.iter().enumerate() {
            let translation = i < 3 || (9..12).contains(&i);
            out.push(if translation { v.signum() * (v.abs() / translation_scale).ln_1p() } else { v });
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Actor outputs for a batch under fixed standard-normal noise.
struct ActorSample {
    cache: super::nn::ForwardCache,
    eps: Vec<f64>,
    action: Vec<f64>,
    log_std: Vec<f64>,
    raw_tanh: Vec<f64>,
    log_prob: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Monte-Carlo estimate of the policy entropy, nats.
    pub entropy: f64,
    pub q_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub config: SacConfig,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    rng: ChaCha8Rng,
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngRecord {
    seed: [u8; 32],
    stream: u64,
    word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: SacConfig,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    rng: RngRecord,
    pub updates: u64,
    /// Caller-defined progress counters, such as the global env step.
    pub global_step: u64,
}

impl SacAgent {
    pub fn new(config: SacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.obs_dim();
        let mut actor_sizes = vec![d];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(2 * ACTION_DIM);
        let mut critic_sizes = vec![d + ACTION_DIM];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, 0.1, &mut rng);
        let q1 = Mlp::new(&critic_sizes, 1.0, &mut rng);
        let q2 = Mlp::new(&critic_sizes, 1.0, &mut rng);
        let lr = config.learning_rate;
        Ok(Self {
            actor_opt: Adam::new(actor.params.len(), lr),
            q1_opt: Adam::new(q1.params.len(), lr),
            q2_opt: Adam::new(q2.params.len(), lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            rng,
            updates: 0,
            config,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(obs.len());
        normalize_observation(obs, self.config.translation_scale, &mut out);
        out
    }

    fn sample_actor(actor: &Mlp, config: &SacConfig, obs: &[f64], batch: usize, eps: Vec<f64>) -> ActorSample {
        let cache = actor.forward(obs, batch);
        let out = cache.output();
        let [lo, hi] = config.log_std_range;
        let n = batch * ACTION_DIM;
        let mut action = Vec::with_capacity(n);
        let mut log_std = Vec::with_capacity(n);
        let mut raw_tanh = Vec::with_capacity(n);
        let mut log_prob = vec![0.0; batch];
        for s in 0..batch {
            let row = &out[s * 2 * ACTION_DIM..(s + 1) * 2 * ACTION_DIM];
            for j in 0..ACTION_DIM {
                let th = row[ACTION_DIM + j].tanh();
                let ls = lo + 0.5 * (hi - lo) * (th + 1.0);
                let e = eps[s * ACTION_DIM + j];
                let u = row[j] + ls.exp() * e;
                let a = u.tanh();
                // log(1 - tanh(u)^2) in a form that stays finite for large |u|.
                let log_jac = 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
                log_prob[s] += -0.5 * e * e - 0.5 * LN_2PI - ls - log_jac;
                action.push(a);
                log_std.push(ls);
                raw_tanh.push(th);
            }
        }
        ActorSample { cache, eps, action, log_std, raw_tanh, log_prob }
    }

    fn critic_input(obs: &[f64], actions: &[f64], batch: usize, d: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(batch * (d + ACTION_DIM));
        for s in 0..batch {
            x.extend_from_slice(&obs[s * d..(s + 1) * d]);
            x.extend_from_slice(&actions[s * ACTION_DIM..(s + 1) * ACTION_DIM]);
        }
        x
    }

    fn draw_noise(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Soft TD targets `r + γ (1 − terminal)(min Q̄(s′, a′) − α log π(a′|s′))`
    /// for next actions drawn with `next_eps`.
    pub fn td_targets(&self, batch: &Batch, next_eps: Vec<f64>) -> Vec<f64> {
        let d = self.obs_dim();
        let b = batch.size;
        let next_obs = self.normalize(&batch.next_obs);
        let next = Self::sample_actor(&self.actor, &self.config, &next_obs, b, next_eps);
        let x = Self::critic_input(&next_obs, &next.action, b, d);
        let t1 = self.q1_target.predict(&x);
        let t2 = self.q2_target.predict(&x);
        (0..b)
            .map(|s| {
                let bootstrap = if batch.terminals[s] {
                    0.0
                } else {
                    t1[s].min(t2[s]) - self.config.entropy_coef * next.log_prob[s]
                };
                self.config.reward_scale * batch.rewards[s] + self.config.discount * bootstrap
            })
            .collect()
    }

    /// Twin-critic loss `mean ½[(Q1 − y)² + (Q2 − y)²]` and its gradients.
    pub fn critic_loss(&self, batch: &Batch, targets: &[f64]) -> (f64, Vec<f64>, Vec<f64>, f64) {
        let d = self.obs_dim();
        let b = batch.size;
        let x = Self::critic_input(&self.normalize(&batch.obs), &batch.actions, b, d);
        let c1 = self.q1.forward(&x, b);
        let c2 = self.q2.forward(&x, b);
        let (o1, o2) = (c1.output(), c2.output());
        let mut loss = 0.0;
        let mut q_mean = 0.0;
        let mut g1 = Vec::with_capacity(b);
        let mut g2 = Vec::with_capacity(b);
        for s in 0..b {
            let (e1, e2) = (o1[s] - targets[s], o2[s] - targets[s]);
            loss += 0.5 * (e1 * e1 + e2 * e2) / b as f64;
            q_mean += 0.5 * (o1[s] + o2[s]) / b as f64;
            g1.push(e1 / b as f64);
            g2.push(e2 / b as f64);
        }
        let mut grad1 = vec![0.0; self.q1.params.len()];
        let mut grad2 = vec![0.0; self.q2.params.len()];
        self.q1.backward(&c1, &g1, &mut grad1);
        self.q2.backward(&c2, &g2, &mut grad2);
        (loss, grad1, grad2, q_mean)
    }

    /// Actor loss `mean[α log π(a|s) − min Q(s, a)]` with `a` reparameterized
    /// through `eps`; returns the loss, its actor gradient and the entropy estimate.
    pub fn actor_loss(&self, batch: &Batch, eps: Vec<f64>) -> (f64, Vec<f64>, f64) {
        let d = self.obs_dim();
        let b = batch.size;
        let bf = b as f64;
        let alpha = self.config.entropy_coef;
        let obs = self.normalize(&batch.obs);
        let sample = Self::sample_actor(&self.actor, &self.config, &obs, b, eps);
        let x = Self::critic_input(&obs, &sample.action, b, d);
        let c1 = self.q1.forward(&x, b);
        let c2 = self.q2.forward(&x, b);
        let (o1, o2) = (c1.output(), c2.output());
        let mut loss = 0.0;
        let mut g1 = vec![0.0; b];
        let mut g2 = vec![0.0; b];
        for s in 0..b {
            let q = if o1[s] <= o2[s] {
                g1[s] = -1.0 / bf;
                o1[s]
            } else {
                g2[s] = -1.0 / bf;
                o2[s]
            };
            loss += (alpha * sample.log_prob[s] - q) / bf;
        }
        let mut scratch1 = vec![0.0; self.q1.params.len()];
        let mut scratch2 = vec![0.0; self.q2.params.len()];
        let dx1 = self.q1.backward(&c1, &g1, &mut scratch1);
        let dx2 = self.q2.backward(&c2, &g2, &mut scratch2);
        let [lo, hi] = self.config.log_std_range;
        let mut grad_out = vec![0.0; b * 2 * ACTION_DIM];
        for s in 0..b {
            for j in 0..ACTION_DIM {
                let k = s * ACTION_DIM + j;
                let col = s * (d + ACTION_DIM) + d + j;
                let a = sample.action[k];
                let dl_da = dx1[col] + dx2[col];
                let dl_du = dl_da * (1.0 - a * a) + alpha / bf * 2.0 * a;
                let dl_dls = dl_du * sample.log_std[k].exp() * sample.eps[k] - alpha / bf;
                let th = sample.raw_tanh[k];
                grad_out[s * 2 * ACTION_DIM + j] = dl_du;
                grad_out[s * 2 * ACTION_DIM + ACTION_DIM + j] = dl_dls * 0.5 * (hi - lo) * (1.0 - th * th);
            }
        }
        let mut grad = vec![0.0; self.actor.params.len()];
        self.actor.backward(&sample.cache, &grad_out, &mut grad);
        let entropy = -sample.log_prob.iter().sum::<f64>() / bf;
        (loss, grad, entropy)
    }

    /// One critic step, one actor step and a soft target update on `batch`.
    pub fn update_on(&mut self, batch: &Batch) -> Result<LossSummary> {
        if batch.size == 0 || batch.obs.len() != batch.size * self.obs_dim() {
            return Err(Error::Usage(format!(
                "batch observations have {} values for {} rows of {}",
                batch.obs.len(),
                batch.size,
                self.obs_dim()
            )));
        }
        let n = batch.size * ACTION_DIM;
        let next_eps = self.draw_noise(n);
        let targets = self.td_targets(batch, next_eps);
        let (critic_loss, g1, g2, q_mean) = self.critic_loss(batch, &targets);
        if !critic_loss.is_finite() {
            return Err(non_finite("critic", critic_loss, batch, &targets));
        }
        self.q1_opt.step(&mut self.q1.params, &g1);
        self.q2_opt.step(&mut self.q2.params, &g2);

        let eps = self.draw_noise(n);
        let (actor_loss, ga, entropy) = self.actor_loss(batch, eps);
        if !actor_loss.is_finite() {
            return Err(non_finite("actor", actor_loss, batch, &targets));
        }
        self.actor_opt.step(&mut self.actor.params, &ga);

        self.q1_target.soft_update(&self.q1, self.config.tau);
        self.q2_target.soft_update(&self.q2, self.config.tau);
        self.updates += 1;
        Ok(LossSummary { critic_loss, actor_loss, entropy, q_mean })
    }

    /// Samples a batch from `buffer` with the agent's own stream and updates.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<LossSummary> {
        let batch = buffer.sample(self.config.batch_size, &mut self.rng)?;
        self.update_on(&batch)
    }

    fn check_dim(&self, stacked: &[f64]) -> Result<()> {
        if stacked.len() != self.obs_dim() {
            return Err(Error::Usage(format!(
                "observation has {} values, policy expects {}",
                stacked.len(),
                self.obs_dim()
            )));
        }
        Ok(())
    }

    /// Action for one stacked observation; `tanh` of the mean when deterministic.
    pub fn act(&self, stacked: &[f64], deterministic: bool, rng: &mut ChaCha8Rng) -> Result<Action> {
        self.check_dim(stacked)?;
        Ok(actor_act(&self.actor, &self.config, stacked, deterministic, rng))
    }

    pub fn policy(&self, deterministic: bool) -> SacPolicy {
        SacPolicy {
            actor: self.actor.clone(),
            config: self.config.clone(),
            deterministic,
        }
    }

    pub fn to_checkpoint(&self, global_step: u64) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            actor: self.actor.clone(),
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            q1_target: self.q1_target.clone(),
            q2_target: self.q2_target.clone(),
            actor_opt: self.actor_opt.clone(),
            q1_opt: self.q1_opt.clone(),
            q2_opt: self.q2_opt.clone(),
            rng: RngRecord {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            updates: self.updates,
            global_step,
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                c.format_version
            )));
        }
        c.config.validate()?;
        let d = c.config.obs_dim();
        if c.actor.input_dim() != d || c.actor.output_dim() != 2 * ACTION_DIM || c.q1.input_dim() != d + ACTION_DIM {
            return Err(Error::Checkpoint("network shapes do not match the config".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(c.rng.seed);
        rng.set_stream(c.rng.stream);
        rng.set_word_pos(
            c.rng
                .word_pos
                .parse()
                .map_err(|_| Error::Checkpoint("bad rng position".into()))?,
        );
        Ok(Self {
            config: c.config,
            actor: c.actor,
            q1: c.q1,
            q2: c.q2,
            q1_target: c.q1_target,
            q2_target: c.q2_target,
            actor_opt: c.actor_opt,
            q1_opt: c.q1_opt,
            q2_opt: c.q2_opt,
            rng,
            updates: c.updates,
        })
    }

    /// Writes the checkpoint atomically (temporary file plus rename).
    pub fn save(&self, path: &Path, global_step: u64) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint(global_step)).map_err(|e| Error::json(path, e))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Returns the agent and the stored global step.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let step = c.global_step;
        Ok((Self::from_checkpoint(c)?, step))
    }
}

fn non_finite(which: &str, loss: f64, batch: &Batch, targets: &[f64]) -> Error {
    let finite_obs = batch.obs.iter().all(|v| v.is_finite());
    let (rmin, rmax) = batch
        .rewards
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let tmax = targets.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    Error::NonFiniteLoss(format!(
        "{which} loss {loss} on batch of {} (rewards in [{rmin}, {rmax}], max |target| {tmax}, finite observations {finite_obs})",
        batch.size
    ))
}

fn actor_act(actor: &Mlp, config: &SacConfig, stacked: &[f64], deterministic: bool, rng: &mut ChaCha8Rng) -> Action {
    let mut x = Vec::with_capacity(stacked.len());
    normalize_observation(stacked, config.translation_scale, &mut x);
    let out = actor.predict(&x);
    let [lo, hi] = config.log_std_range;
    let mut a = [0.0; ACTION_DIM];
    for j in 0..ACTION_DIM {
        let u = if deterministic {
            out[j]
        } else {
            let ls = lo + 0.5 * (hi - lo) * (out[ACTION_DIM + j].tanh() + 1.0);
            out[j] + ls.exp() * rng.sample::<f64, _>(StandardNormal)
        };
        a[j] = u.tanh();
    }
    a
}

/// Frozen copy of an actor for rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct SacPolicy {
    pub actor: Mlp,
    pub config: SacConfig,
    pub deterministic: bool,
}

impl Policy for SacPolicy {
    fn stack_len(&self) -> usize {
        self.config.stack_len
    }

    fn act(&self, stacked: &[f64], rng: &mut ChaCha8Rng) -> Action {
        actor_act(&self.actor, &self.config, stacked, self.deterministic, rng)
    }

    fn name(&self) -> String {
        if self.deterministic { "sac" } else { "sac-stochastic" }.into()
    }
}
