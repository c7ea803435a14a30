//! PPO with selective noise injection and the information-bottleneck
//! actor-critic.
//!
//! Rollouts and the critic always run with regularization noise suspended
//! (frozen dropout mask, or the posterior mode for the bottleneck). The
//! policy gradient mixes a noise-suspended and a noisy term with weight
//! `lambda`.

mod eval;
mod losses;
mod rollout;
mod trainer;
mod update;

pub use eval::{evaluate_levels, evaluate_policy, evaluate_policy_with, EvalReport, EvalRooms, RoomStats};
pub use losses::{compute_gae, normalize_advantages, ppo_policy_loss, ppo_value_loss, AdvantageSet};
pub use rollout::{collect_rollout, RolloutBatch};
pub use trainer::{IterationReport, RlTrainConfig, Trainer};
pub use update::{ibac_aux_terms, kl_proxy, minibatch_terms, sni_gradient, sni_update, GradientReport, KlPath, MinibatchTerms, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::gridworld::GridError;
use crate::netblocks::{MultiroomArch, NetError};

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<crate::diffcore::DiffError> for RlError {
    fn from(e: crate::diffcore::DiffError) -> Self {
        RlError::Net(NetError::Diff(e))
    }
}

/// Loss weighting and PPO mechanics for one update phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SniConfig {
    /// Weight of the noise-suspended policy term; `1 − lambda` goes to the noisy term.
    pub lambda: f64,
    /// Must match the network architecture.
    pub regularizer: MultiroomArch,
    /// Weight of the latent KL penalty.
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "defaults::lambda_v")]
    pub lambda_v: f64,
    #[serde(default = "defaults::lambda_h")]
    pub lambda_h: f64,
    #[serde(default = "defaults::clip_eps")]
    pub clip_eps: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::minibatches")]
    pub minibatches: usize,
    #[serde(default = "defaults::yes")]
    pub normalize_advantages: bool,
    /// Clip `V − Vʳ` to `[1 − ε, 1 + ε]` instead of `[−ε, ε]`.
    #[serde(default)]
    pub value_clip_literal: bool,
}

mod defaults {
    pub fn lambda_v() -> f64 {
        0.5
    }
    pub fn lambda_h() -> f64 {
        0.01
    }
    pub fn clip_eps() -> f64 {
        0.2
    }
    pub fn epochs() -> usize {
        4
    }
    pub fn minibatches() -> usize {
        4
    }
    pub fn yes() -> bool {
        true
    }
}

impl SniConfig {
    /// Defaults for an architecture: `lambda` 0.5 with `beta` 1e-6 for the
    /// bottleneck, `lambda` 1 otherwise.
    pub fn for_arch(arch: MultiroomArch) -> Self {
        let (lambda, beta) = match arch {
            MultiroomArch::Ibac => (0.5, 1e-6),
            _ => (1.0, 0.0),
        };
        Self {
            lambda,
            regularizer: arch,
            beta,
            lambda_v: defaults::lambda_v(),
            lambda_h: defaults::lambda_h(),
            clip_eps: defaults::clip_eps(),
            epochs: defaults::epochs(),
            minibatches: defaults::minibatches(),
            normalize_advantages: true,
            value_clip_literal: false,
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return bad("epochs and minibatches must be at least 1".into());
        }
        Ok(())
    }
}
