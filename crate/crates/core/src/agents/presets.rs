//! Hyperparameter presets. The large-scale values are kept for reference;
//! only SAC is implemented.

use serde::Serialize;

use super::sac::SacConfig;

pub fn sac_paper() -> SacConfig {
    SacConfig {
        hidden: vec![512, 512],
        learning_rate: 8e-5,
        discount: 0.997,
        batch_size: 4096,
        entropy_coef: 3e-4,
        train_ratio: 8,
        tau: 0.005,
        buffer_capacity: 20_000_000,
        warmup: 500_000,
        stack_len: 10,
        translation_scale: 0.5,
        log_std_range: [-5.0, 2.0],
        reward_scale: 1.0,
    }
}

/// Sized for a few hundred thousand env steps on one CPU. Smaller networks
/// buy more updates per transition; the shorter horizon and the reward scale
/// below one keep the squashed policy away from saturated, jittering actions.
pub fn sac_desk() -> SacConfig {
    SacConfig {
        hidden: vec![128, 128],
        learning_rate: 3e-4,
        discount: 0.99,
        batch_size: 256,
        train_ratio: 32,
        buffer_capacity: 1_000_000,
        warmup: 10_000,
        translation_scale: 0.05,
        reward_scale: 0.3,
        ..sac_paper()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PpoReference {
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub horizon: usize,
    pub entropy_coef: f64,
    pub epochs: usize,
}

pub const PPO_REFERENCE: PpoReference = PpoReference {
    hidden: [512, 512],
    learning_rate: 3e-4,
    discount: 0.997,
    batch_size: 8192,
    horizon: 128,
    entropy_coef: 3e-4,
    epochs: 8,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DreamerReference {
    pub hidden: [usize; 2],
    pub world_model_learning_rate: f64,
    pub actor_critic_learning_rate: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub batch_length: usize,
    pub imagination_horizon: usize,
    pub entropy_coef: f64,
    pub train_ratio: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
}

pub const DREAMER_REFERENCE: DreamerReference = DreamerReference {
    hidden: [512, 512],
    world_model_learning_rate: 1e-4,
    actor_critic_learning_rate: 3e-5,
    discount: 0.997,
    batch_size: 16,
    batch_length: 64,
    imagination_horizon: 25,
    entropy_coef: 3e-4,
    train_ratio: 8,
    buffer_capacity: 20_000_000,
    warmup: 500_000,
};
