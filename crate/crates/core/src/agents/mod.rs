//! Policies, observation stacking and the SAC learner.

pub mod nn;
pub mod presets;
pub mod replay;
pub mod sac;
pub mod scripted;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, Observation, ACTION_DIM, OBS_DIM};

pub use sac::{LossSummary, SacAgent, SacConfig, SacPolicy};
pub use scripted::ScriptedController;

/// A policy maps the stacked observation (`stack_len() × 18` values, oldest
/// first) to an action in `[-1, 1]^6`.
pub trait Policy: Sync {
    fn stack_len(&self) -> usize {
        1
    }

    fn act(&self, stacked: &[f64], rng: &mut ChaCha8Rng) -> Action;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _stacked: &[f64], rng: &mut ChaCha8Rng) -> Action {
        let mut a = [0.0; ACTION_DIM];
        for v in &mut a {
            *v = rng.random_range(-1.0..=1.0);
        }
        a
    }

    fn name(&self) -> String {
        "random".into()
    }
}

impl Policy for ScriptedController {
    fn act(&self, stacked: &[f64], _rng: &mut ChaCha8Rng) -> Action {
        let last = &stacked[stacked.len() - OBS_DIM..];
        ScriptedController::act(self, &Observation(last.try_into().expect("18 values")))
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}

/// History of the `K` most recent observations; a reset pre-fills all slots
/// with the first observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    k: usize,
    data: Vec<f64>,
}

impl ObservationStack {
    pub fn new(k: usize, first: &Observation) -> Self {
        let k = k.max(1);
        let mut s = Self {
            k,
            data: vec![0.0; k * OBS_DIM],
        };
        s.reset(first);
        s
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn reset(&mut self, first: &Observation) {
        for chunk in self.data.chunks_mut(OBS_DIM) {
            chunk.copy_from_slice(&first.0);
        }
    }

    pub fn push(&mut self, obs: &Observation) {
        self.data.copy_within(OBS_DIM.., 0);
        let n = self.data.len();
        self.data[n - OBS_DIM..].copy_from_slice(&obs.0);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Stack as it would look after pushing `obs`, without mutating.
    pub fn peek_push(&self, obs: &Observation) -> Vec<f64> {
        let mut v = self.data[OBS_DIM..].to_vec();
        v.extend_from_slice(&obs.0);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: f64) -> Observation {
        Observation([v; OBS_DIM])
    }

    #[test]
    fn stack_prefill_and_shift() {
        let mut s = ObservationStack::new(3, &obs(1.0));
        assert_eq!(s.as_slice(), &[1.0; 54][..]);
        s.push(&obs(2.0));
        assert_eq!(&s.as_slice()[..36], &[1.0; 36][..]);
        assert_eq!(&s.as_slice()[36..], &[2.0; 18][..]);
        assert_eq!(s.peek_push(&obs(3.0))[36..], [3.0; 18]);
    }

    #[test]
    fn single_slot_stack_is_the_observation() {
        let mut s = ObservationStack::new(1, &obs(1.0));
        s.push(&obs(4.0));
        assert_eq!(s.as_slice(), &obs(4.0).0[..]);
    }
}
