//! PPO surrogate, clipped value loss and GAE.

use crate::diffcore::{DiffError, Graph, Var};

use super::RolloutBatch;

/// Advantages and regression targets, `[T × B]` flattened like the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

/// GAE with done-masking; `V(s_{t+1})` is dropped wherever `done_t`.
pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda_gae: f64) -> AdvantageSet {
    let (t_len, b) = (batch.n_steps, batch.n_envs);
    let mut adv = vec![0.0; t_len * b];
    let mut running = vec![0.0; b];
    for t in (0..t_len).rev() {
        for e in 0..b {
            let i = t * b + e;
            let next_v = if t + 1 == t_len { batch.bootstrap_values[e] } else { batch.rollout_values[i + b] };
            let live = if batch.dones[i] { 0.0 } else { 1.0 };
            let delta = batch.rewards[i] + gamma * next_v * live - batch.rollout_values[i];
            running[e] = delta + gamma * lambda_gae * live * running[e];
            adv[i] = running[e];
        }
    }
    let value_targets = adv.iter().zip(&batch.rollout_values).map(|(a, v)| a + v).collect();
    AdvantageSet { advantages: adv, value_targets }
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
}

/// `−mean(min(c·A, clip(c, 1−ε, 1+ε)·A))`, `c = exp(log π_new − log π_rollout)`.
/// Rollout log-probs and advantages enter as constants.
pub fn ppo_policy_loss(g: &mut Graph, log_probs_new: Var, rollout_log_probs: &[f64], advantages: &[f64], clip_eps: f64) -> Result<Var, DiffError> {
    let n = rollout_log_probs.len();
    let old = g.constant(&[n], rollout_log_probs.to_vec())?;
    let a = g.constant(&[n], advantages.to_vec())?;
    let diff = g.sub(log_probs_new, old)?;
    let ratio = g.exp(diff);
    let clipped = g.clip_value(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    let s1 = g.mul(ratio, a)?;
    let s2 = g.mul(clipped, a)?;
    let m = g.min_elem(s1, s2)?;
    let mean = g.mean(m);
    Ok(g.neg(mean))
}

/// `mean(½·max((V − V_target)², (Vʳ + clip(V − Vʳ, lo, hi) − V_target)²))`
/// with `(lo, hi) = (−ε, ε)`, or `(1 − ε, 1 + ε)` when `literal` is set.
pub fn ppo_value_loss(g: &mut Graph, values_new: Var, rollout_values: &[f64], value_targets: &[f64], clip_eps: f64, literal: bool) -> Result<Var, DiffError> {
    let n = rollout_values.len();
    let vr = g.constant(&[n], rollout_values.to_vec())?;
    let target = g.constant(&[n], value_targets.to_vec())?;
    let (lo, hi) = if literal { (1.0 - clip_eps, 1.0 + clip_eps) } else { (-clip_eps, clip_eps) };
    let d = g.sub(values_new, target)?;
    let l1 = g.square(d);
    let dv = g.sub(values_new, vr)?;
    let dv = g.clip_value(dv, lo, hi);
    let vc = g.add(vr, dv)?;
    let dc = g.sub(vc, target)?;
    let l2 = g.square(dc);
    let m = g.max_elem(l1, l2)?;
    let mean = g.mean(m);
    Ok(g.scale(mean, 0.5))
}
