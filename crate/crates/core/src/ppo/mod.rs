//! Clipped-surrogate PPO over placement episodes.

mod buffer;
mod trainer;
mod update;

use serde::{Deserialize, Serialize};

use crate::env::{EnvError, EnvOptions, NodeOrder};
use crate::policy::ModelError;

pub use buffer::{collect_rollouts, compute_returns_advantages, EpisodeSummary, RolloutBuffer, RolloutPlan, StepRecord};
pub use trainer::{finetune, train, write_metrics_csv, IterationMetrics, TrainOutcome, Trainer, METRICS_HEADER};
pub use update::{clipped_objective, ppo_update, UpdateStats};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, what: &'static str, detail: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Device(#[from] crate::device::DeviceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// PPO iterations K.
    pub epochs: usize,
    pub episodes_per_iter: usize,
    pub clip: f64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub update_epochs: usize,
    pub entropy_coef: f64,
    /// 0 means one minibatch per update epoch.
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Generalized advantage estimation; off means `A = R - V`.
    pub gae_lambda: Option<f64>,
    pub masking: bool,
    pub random_order: bool,
    pub workers: usize,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: usize,
    /// When false the wall-time column is written as 0 so logs from equal
    /// seeds compare byte for byte.
    pub log_wall_time: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            episodes_per_iter: 16,
            clip: 0.2,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            update_epochs: 4,
            entropy_coef: 0.01,
            minibatch_size: 256,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            gae_lambda: None,
            masking: true,
            random_order: false,
            workers: 1,
            checkpoint_every: 0,
            log_wall_time: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.episodes_per_iter == 0 || self.update_epochs == 0 || self.workers == 0 {
            return bad("episodes_per_iter, update_epochs and workers must be at least 1");
        }
        if let Some(l) = self.gae_lambda {
            if !(0.0..=1.0).contains(&l) {
                return bad("gae_lambda must lie in [0, 1]");
            }
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn env_options(&self) -> EnvOptions {
        EnvOptions {
            order: if self.random_order { NodeOrder::Random } else { NodeOrder::Topological },
            masking: self.masking,
        }
    }
}
