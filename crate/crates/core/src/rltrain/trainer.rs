use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, AdamState};
use crate::gridworld::{EpisodeEnd, VecEnv};
use crate::netblocks::{MultiroomArch, MultiroomNet};
use crate::rng::{streams, SeedTree, Stream};

use super::{collect_rollout, compute_gae, evaluate_policy_with, sni_update, EvalReport, EvalRooms, RlError, SniConfig, UpdateStats};

/// Everything that shapes a multiroom training run except the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlTrainConfig {
    pub arch: MultiroomArch,
    /// Defaults to [`SniConfig::for_arch`].
    #[serde(default)]
    pub sni: Option<SniConfig>,
    #[serde(default = "d::lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d::clip")]
    pub grad_clip: f64,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::lambda_gae")]
    pub lambda_gae: f64,
    #[serde(default = "d::n_envs")]
    pub n_envs: usize,
    #[serde(default = "d::n_steps")]
    pub n_steps: usize,
    /// Fixed room count for training levels; drawn per level when unset.
    #[serde(default)]
    pub n_rooms: Option<u8>,
    #[serde(default = "d::frames")]
    pub total_frames: u64,
}

mod d {
    pub fn lr() -> f64 {
        7e-4
    }
    pub fn clip() -> f64 {
        0.5
    }
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn lambda_gae() -> f64 {
        0.95
    }
    pub fn n_envs() -> usize {
        16
    }
    pub fn n_steps() -> usize {
        128
    }
    pub fn frames() -> u64 {
        5_000_000
    }
}

impl RlTrainConfig {
    pub fn new(arch: MultiroomArch) -> Self {
        Self {
            arch,
            sni: None,
            learning_rate: d::lr(),
            weight_decay: 0.0,
            grad_clip: d::clip(),
            gamma: d::gamma(),
            lambda_gae: d::lambda_gae(),
            n_envs: d::n_envs(),
            n_steps: d::n_steps(),
            n_rooms: None,
            total_frames: d::frames(),
        }
    }

    pub fn sni(&self) -> SniConfig {
        self.sni.unwrap_or_else(|| SniConfig::for_arch(self.arch))
    }

    pub fn frames_per_iteration(&self) -> u64 {
        (self.n_envs * self.n_steps) as u64
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let sni = self.sni();
        sni.validate()?;
        if sni.regularizer != self.arch {
            return Err(RlError::Config(format!("sni.regularizer {:?} does not match arch {:?}", sni.regularizer, self.arch)));
        }
        if self.n_envs == 0 || self.n_steps == 0 {
            return Err(RlError::Config("n_envs and n_steps must be positive".into()));
        }
        if self.n_envs * self.n_steps < sni.minibatches {
            return Err(RlError::Config("fewer samples per rollout than minibatches".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(RlError::Config("learning_rate and grad_clip must be positive, weight_decay non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda_gae) {
            return Err(RlError::Config("gamma and lambda_gae must lie in [0, 1]".into()));
        }
        if let Some(n) = self.n_rooms {
            if !(1..=3).contains(&n) {
                return Err(RlError::Config(format!("n_rooms must be 1, 2 or 3, got {n}")));
            }
        }
        Ok(())
    }
}

/// What one training iteration produced.
#[derive(Clone, Debug)]
pub struct IterationReport {
    pub iteration: u64,
    pub frames: u64,
    pub update: UpdateStats,
    pub episodes: Vec<EpisodeEnd>,
}

/// Rollout–update loop state.
pub struct Trainer {
    pub config: RlTrainConfig,
    sni: SniConfig,
    seeds: SeedTree,
    net: MultiroomNet,
    opt: AdamState,
    envs: VecEnv,
    action_rng: Stream,
    noise_rng: Stream,
    shuffle_rng: Stream,
    iteration: u64,
    frames: u64,
    evaluations: u64,
}

impl Trainer {
    pub fn new(config: RlTrainConfig, seed: u64) -> Result<Self, RlError> {
        config.validate()?;
        let seeds = SeedTree::new(seed);
        let net = MultiroomNet::build(config.arch, &mut seeds.stream(streams::INIT, 0));
        let adam = AdamConfig::new(config.learning_rate).with_weight_decay(config.weight_decay).with_clip_norm(config.grad_clip);
        let opt = AdamState::new(adam, &net.store);
        let envs = VecEnv::new(config.n_envs, &seeds, streams::ENV_GEN, config.n_rooms)?;
        let noise_name = if config.arch == MultiroomArch::Ibac { streams::LATENT_NOISE } else { streams::DROPOUT_NOISE };
        Ok(Self {
            sni: config.sni(),
            action_rng: seeds.stream(streams::ACTION_SAMPLING, 0),
            noise_rng: seeds.stream(noise_name, 0),
            shuffle_rng: seeds.stream(streams::MINIBATCH, 0),
            config,
            seeds,
            net,
            opt,
            envs,
            iteration: 0,
            frames: 0,
            evaluations: 0,
        })
    }

    pub fn net(&self) -> &MultiroomNet {
        &self.net
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn done(&self) -> bool {
        self.frames >= self.config.total_frames
    }

    pub fn iterate(&mut self) -> Result<IterationReport, RlError> {
        self.net.freeze_dropout_mask(self.seeds.seed(streams::DROPOUT_MASK, self.iteration));
        let (batch, episodes) = collect_rollout(&self.net, &mut self.envs, self.config.n_steps, &mut self.action_rng)?;
        let adv = compute_gae(&batch, self.config.gamma, self.config.lambda_gae);
        let update = sni_update(&mut self.net, &mut self.opt, &batch, &adv, &self.sni, &mut self.shuffle_rng, &mut self.noise_rng)?;
        self.iteration += 1;
        self.frames += batch.len() as u64;
        Ok(IterationReport { iteration: self.iteration, frames: self.frames, update, episodes })
    }

    /// Evaluates on levels from a stream reserved for this evaluation.
    pub fn evaluate(&mut self, n_episodes: usize, rooms: EvalRooms) -> Result<EvalReport, RlError> {
        let tree = self.seeds.child(streams::EVAL_GEN, self.evaluations);
        self.evaluations += 1;
        evaluate_policy_with(&self.net, n_episodes, rooms, &tree)
    }
}
