//! FIFO replay storage in single precision.

use rand::Rng;

use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::vecenv::Transition;

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    capacity: usize,
    warmup: usize,
    /// Next slot to overwrite once full.
    head: usize,
    len: usize,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    terminals: Vec<bool>,
}

/// A sampled batch in row-major f64 blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl ReplayBuffer {
    /// Storage grows on demand up to `capacity`.
    pub fn new(obs_dim: usize, capacity: usize, warmup: usize) -> Self {
        Self {
            obs_dim,
            capacity: capacity.max(1),
            warmup,
            head: 0,
            len: 0,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_warm(&self) -> bool {
        self.len >= self.warmup.max(1)
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(Error::Usage(format!(
                "transition observation has {} values, buffer expects {}",
                t.obs.len(),
                self.obs_dim
            )));
        }
        let d = self.obs_dim;
        if self.len < self.capacity {
            self.obs.extend(t.obs.iter().map(|&v| v as f32));
            self.next_obs.extend(t.next_obs.iter().map(|&v| v as f32));
            self.actions.extend(t.action.iter().map(|&v| v as f32));
            self.rewards.push(t.reward as f32);
            self.terminals.push(t.terminal);
            self.len += 1;
        } else {
            let i = self.head;
            for (dst, &src) in self.obs[i * d..(i + 1) * d].iter_mut().zip(&t.obs) {
                *dst = src as f32;
            }
            for (dst, &src) in self.next_obs[i * d..(i + 1) * d].iter_mut().zip(&t.next_obs) {
                *dst = src as f32;
            }
            for (dst, &src) in self.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM].iter_mut().zip(&t.action) {
                *dst = src as f32;
            }
            self.rewards[i] = t.reward as f32;
            self.terminals[i] = t.terminal;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Uniform sampling with replacement; refuses before warm-up.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        if !self.is_warm() {
            return Err(Error::Usage(format!(
                "replay buffer holds {} transitions, warm-up needs {}",
                self.len, self.warmup
            )));
        }
        let indices: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len)).collect();
        Ok(self.gather(&indices))
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let d = self.obs_dim;
        let mut b = Batch {
            size: indices.len(),
            obs: Vec::with_capacity(indices.len() * d),
            actions: Vec::with_capacity(indices.len() * ACTION_DIM),
            rewards: Vec::with_capacity(indices.len()),
            next_obs: Vec::with_capacity(indices.len() * d),
            terminals: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            b.obs.extend(self.obs[i * d..(i + 1) * d].iter().map(|&v| v as f64));
            b.next_obs.extend(self.next_obs[i * d..(i + 1) * d].iter().map(|&v| v as f64));
            b.actions
                .extend(self.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM].iter().map(|&v| v as f64));
            b.rewards.push(self.rewards[i] as f64);
            b.terminals.push(self.terminals[i]);
        }
        b
    }

    /// Reward stored in slot `i` (slots are in insertion order until the first wrap).
    pub fn reward_at(&self, i: usize) -> f64 {
        self.rewards[i] as f64
    }
}
