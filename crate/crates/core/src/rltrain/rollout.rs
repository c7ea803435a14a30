use crate::diffcore::Graph;
use crate::distributions::sample_from_probs;
use crate::gridworld::{EpisodeEnd, VecEnv, OBS_LEN, GRID};
use crate::netblocks::{MultiroomNet, NoiseMode};
use crate::rng::Stream;

use super::RlError;

/// Trajectories gathered under the noise-suspended policy. Every per-step
/// array is `[T × B]` flattened with index `t * n_envs + env`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub n_steps: usize,
    pub n_envs: usize,
    /// `[T × B × 11 × 11 × 3]`.
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub rollout_log_probs: Vec<f64>,
    pub rollout_values: Vec<f64>,
    /// `V̄(s_T)` per env.
    pub bootstrap_values: Vec<f64>,
    pub frozen_mask_seed: Option<u64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Observations of the listed samples, `[n × 11 × 11 × 3]`.
    pub fn gather_obs(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * OBS_LEN);
        for &i in idx {
            out.extend_from_slice(&self.observations[i * OBS_LEN..(i + 1) * OBS_LEN]);
        }
        out
    }
}

/// Bar-policy probabilities, log-probabilities and values for a batch of
/// observations, without gradient tracking.
pub(crate) fn suspended_heads(net: &MultiroomNet, obs: &[f64], rng: &mut Stream) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = obs.len() / OBS_LEN;
    let mut g = Graph::inference();
    let x = g.constant(&[n, GRID, GRID, 3], obs.to_vec())?;
    let out = net.forward(&mut g, x, NoiseMode::Suspended, rng)?;
    Ok((g.value(out.action_params.log_probs()).to_vec(), g.value(out.value).to_vec()))
}

/// Runs `n_steps` batched steps. Actions are sampled from the bar-policy with
/// `rng`; log-probabilities and values are recorded as computed.
pub fn collect_rollout(net: &MultiroomNet, envs: &mut VecEnv, n_steps: usize, rng: &mut Stream) -> Result<(RolloutBatch, Vec<EpisodeEnd>), RlError> {
    let b = envs.len();
    let na = net.n_actions();
    let mut batch = RolloutBatch {
        n_steps,
        n_envs: b,
        observations: Vec::with_capacity(n_steps * b * OBS_LEN),
        actions: Vec::with_capacity(n_steps * b),
        rewards: Vec::with_capacity(n_steps * b),
        dones: Vec::with_capacity(n_steps * b),
        rollout_log_probs: Vec::with_capacity(n_steps * b),
        rollout_values: Vec::with_capacity(n_steps * b),
        bootstrap_values: Vec::new(),
        frozen_mask_seed: net.frozen_mask_seed(),
    };
    let mut finished = Vec::new();
    let mut obs = envs.observations();
    for _ in 0..n_steps {
        let (log_probs, values) = suspended_heads(net, &obs, rng)?;
        let mut actions = Vec::with_capacity(b);
        for e in 0..b {
            let row = &log_probs[e * na..(e + 1) * na];
            let probs: Vec<f64> = row.iter().map(|l| l.exp()).collect();
            let a = sample_from_probs(&probs, rng);
            actions.push(a);
            batch.rollout_log_probs.push(row[a]);
        }
        batch.rollout_values.extend_from_slice(&values);
        batch.observations.extend_from_slice(&obs);
        let step = envs.step(&actions)?;
        batch.actions.extend_from_slice(&actions);
        batch.rewards.extend_from_slice(&step.rewards);
        batch.dones.extend_from_slice(&step.dones);
        finished.extend(step.finished);
        obs = step.obs;
    }
    batch.bootstrap_values = suspended_heads(net, &obs, rng)?.1;
    Ok((batch, finished))
}
