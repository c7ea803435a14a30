use rand::seq::SliceRandom;

use crate::diffcore::{AdamState, Graph, Var};
use crate::gridworld::GRID;
use crate::netblocks::{MultiroomArch, MultiroomNet, NoiseMode};
use crate::rng::Stream;

use super::losses::{normalize_advantages, ppo_policy_loss, ppo_value_loss};
use super::{AdvantageSet, RlError, RolloutBatch, SniConfig};

/// Which forward path a KL proxy is measured on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlPath {
    Det,
    Stoch,
}

/// Graph nodes of one minibatch objective.
#[derive(Clone, Copy, Debug)]
pub struct MinibatchTerms {
    pub total: Var,
    pub policy_det: Option<Var>,
    pub policy_stoch: Option<Var>,
    pub value: Var,
    pub kl: Option<Var>,
    /// The entropy bonus actually used (mixed with `lambda` under SNI).
    pub entropy: Var,
    pub kl_proxy_det: f64,
    /// `None` for architectures without injected noise.
    pub kl_proxy_stoch: Option<f64>,
}

fn gather<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

fn mean_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64
}

/// Builds the SNI objective for the samples `idx`:
/// `λ·L_det + (1−λ)·L_stoch + λ_V·L_V + β·L_KL − λ_H·H`.
///
/// The trunk and encoder are shared by both paths; the critic always reads the
/// noise-suspended path. An endpoint `λ` drops the unused policy term.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_terms(
    g: &mut Graph,
    net: &MultiroomNet,
    batch: &RolloutBatch,
    advantages: &[f64],
    value_targets: &[f64],
    idx: &[usize],
    cfg: &SniConfig,
    noise: &mut Stream,
) -> Result<MinibatchTerms, RlError> {
    let n = idx.len();
    let obs = g.constant(&[n, GRID, GRID, 3], batch.gather_obs(idx))?;
    let actions = gather(&batch.actions, idx);
    let old_lp = gather(&batch.rollout_log_probs, idx);
    let adv = gather(advantages, idx);
    let vr = gather(&batch.rollout_values, idx);
    let vt = gather(value_targets, idx);

    let trunk = net.trunk(g, obs)?;
    let enc = net.encode(g, trunk)?;
    let det = net.decode(g, &enc, NoiseMode::Suspended, noise)?;
    let noisy = net.arch != MultiroomArch::Baseline;
    let stoch = if noisy { Some(net.decode(g, &enc, NoiseMode::Stochastic, noise)?) } else { None };

    let lp_det = det.action_params.log_prob(g, &actions)?;
    let kl_proxy_det = mean_diff(&old_lp, g.value(lp_det));
    let lp_stoch = match &stoch {
        Some(s) => Some(s.action_params.log_prob(g, &actions)?),
        None => None,
    };
    let kl_proxy_stoch = lp_stoch.map(|lp| mean_diff(&old_lp, g.value(lp)));

    let lambda = if noisy { cfg.lambda } else { 1.0 };
    let policy_det = if lambda > 0.0 { Some(ppo_policy_loss(g, lp_det, &old_lp, &adv, cfg.clip_eps)?) } else { None };
    let policy_stoch = match lp_stoch {
        Some(lp) if lambda < 1.0 => Some(ppo_policy_loss(g, lp, &old_lp, &adv, cfg.clip_eps)?),
        _ => None,
    };
    let h_det = det.action_params.entropy(g)?;
    let h_det = g.mean(h_det);

    let (policy, entropy) = match (policy_det, policy_stoch, &stoch) {
        (Some(d), None, _) => (d, h_det),
        (None, Some(s), Some(st)) => {
            let h = st.action_params.entropy(g)?;
            (s, g.mean(h))
        }
        (Some(d), Some(s), Some(st)) => {
            let h = st.action_params.entropy(g)?;
            let h_stoch = g.mean(h);
            let wd = g.scale(d, lambda);
            let ws = g.scale(s, 1.0 - lambda);
            let hd = g.scale(h_det, lambda);
            let hs = g.scale(h_stoch, 1.0 - lambda);
            (g.add(wd, ws)?, g.add(hd, hs)?)
        }
        _ => unreachable!("lambda selects at least one policy term"),
    };

    let value = ppo_value_loss(g, det.value, &vr, &vt, cfg.clip_eps, cfg.value_clip_literal)?;
    let kl = match det.latent {
        Some(l) => {
            let k = l.kl_to_standard(g)?;
            Some(g.mean(k))
        }
        None => None,
    };

    let wv = g.scale(value, cfg.lambda_v);
    let mut total = g.add(policy, wv)?;
    if let Some(k) = kl {
        if cfg.beta != 0.0 {
            let wk = g.scale(k, cfg.beta);
            total = g.add(total, wk)?;
        }
    }
    let we = g.scale(entropy, cfg.lambda_h);
    total = g.sub(total, we)?;

    Ok(MinibatchTerms { total, policy_det, policy_stoch, value, kl, entropy, kl_proxy_det, kl_proxy_stoch })
}

/// Scalar summary of one minibatch gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientReport {
    pub total_loss: f64,
    pub policy_loss_det: Option<f64>,
    pub policy_loss_stoch: Option<f64>,
    pub value_loss: f64,
    pub kl_loss: f64,
    pub entropy: f64,
    pub kl_proxy_det: f64,
    pub kl_proxy_stoch: Option<f64>,
    /// The loss was not finite and no gradient was stored.
    pub skipped: bool,
}

/// Zeroes `net.store` gradients and fills them with the gradient of the
/// minibatch objective. No parameter changes.
#[allow(clippy::too_many_arguments)]
pub fn sni_gradient(
    net: &mut MultiroomNet,
    batch: &RolloutBatch,
    advantages: &[f64],
    value_targets: &[f64],
    idx: &[usize],
    cfg: &SniConfig,
    noise: &mut Stream,
) -> Result<GradientReport, RlError> {
    net.store.zero_grad();
    let mut g = Graph::new();
    let t = minibatch_terms(&mut g, net, batch, advantages, value_targets, idx, cfg, noise)?;
    let total_loss = g.scalar(t.total);
    let report = GradientReport {
        total_loss,
        policy_loss_det: t.policy_det.map(|v| g.scalar(v)),
        policy_loss_stoch: t.policy_stoch.map(|v| g.scalar(v)),
        value_loss: g.scalar(t.value),
        kl_loss: t.kl.map(|v| g.scalar(v)).unwrap_or(0.0),
        entropy: g.scalar(t.entropy),
        kl_proxy_det: t.kl_proxy_det,
        kl_proxy_stoch: t.kl_proxy_stoch,
        skipped: !total_loss.is_finite(),
    };
    if report.skipped {
        log::warn!("non-finite minibatch loss {total_loss}; skipping");
        return Ok(report);
    }
    g.backward(t.total)?;
    g.accumulate_param_grads(&mut net.store);
    Ok(report)
}

/// Averages over one update phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub total_loss: f64,
    pub policy_loss_det: Option<f64>,
    pub policy_loss_stoch: Option<f64>,
    pub value_loss: f64,
    pub kl_loss: f64,
    pub entropy: f64,
    pub kl_proxy_det: f64,
    pub kl_proxy_stoch: Option<f64>,
    pub kl_proxy_det_by_epoch: Vec<f64>,
    pub kl_proxy_stoch_by_epoch: Vec<f64>,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
    pub skipped: usize,
}

#[derive(Default)]
struct Acc {
    n: usize,
    sum: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
    }
    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// `epochs` passes over shuffled minibatches; each minibatch gradient is
/// clipped and applied by `opt`.
pub fn sni_update(
    net: &mut MultiroomNet,
    opt: &mut AdamState,
    batch: &RolloutBatch,
    adv: &AdvantageSet,
    cfg: &SniConfig,
    shuffle: &mut Stream,
    noise: &mut Stream,
) -> Result<UpdateStats, RlError> {
    cfg.validate()?;
    if cfg.regularizer != net.arch {
        return Err(RlError::Config(format!("regularizer {:?} does not match network {:?}", cfg.regularizer, net.arch)));
    }
    let mut advantages = adv.advantages.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut advantages);
    }
    let n = batch.len();
    let mb = n.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut total, mut pd, mut ps, mut val, mut kl, mut ent, mut kd, mut ks, mut gn) =
        (Acc::default(), Acc::default(), Acc::default(), Acc::default(), Acc::default(), Acc::default(), Acc::default(), Acc::default(), Acc::default());
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(shuffle);
        let (mut ekd, mut eks) = (Acc::default(), Acc::default());
        for idx in order.chunks(mb) {
            stats.minibatches += 1;
            let r = sni_gradient(net, batch, &advantages, &adv.value_targets, idx, cfg, noise)?;
            if r.skipped {
                stats.skipped += 1;
                continue;
            }
            let step = opt.step(&mut net.store);
            if step.skipped {
                stats.skipped += 1;
                continue;
            }
            gn.push(step.grad_norm);
            total.push(r.total_loss);
            if let Some(v) = r.policy_loss_det {
                pd.push(v);
            }
            if let Some(v) = r.policy_loss_stoch {
                ps.push(v);
            }
            val.push(r.value_loss);
            kl.push(r.kl_loss);
            ent.push(r.entropy);
            kd.push(r.kl_proxy_det);
            ekd.push(r.kl_proxy_det);
            if let Some(v) = r.kl_proxy_stoch {
                ks.push(v);
                eks.push(v);
            }
        }
        stats.kl_proxy_det_by_epoch.push(ekd.mean().unwrap_or(f64::NAN));
        if let Some(v) = eks.mean() {
            stats.kl_proxy_stoch_by_epoch.push(v);
        }
    }
    stats.total_loss = total.mean().unwrap_or(f64::NAN);
    stats.policy_loss_det = pd.mean();
    stats.policy_loss_stoch = ps.mean();
    stats.value_loss = val.mean().unwrap_or(f64::NAN);
    stats.kl_loss = kl.mean().unwrap_or(f64::NAN);
    stats.entropy = ent.mean().unwrap_or(f64::NAN);
    stats.kl_proxy_det = kd.mean().unwrap_or(f64::NAN);
    stats.kl_proxy_stoch = ks.mean();
    stats.grad_norm = gn.mean().unwrap_or(f64::NAN);
    Ok(stats)
}

/// `mean(log πʳ − log π_new)` over the samples `idx` on the chosen path.
pub fn kl_proxy(net: &MultiroomNet, batch: &RolloutBatch, idx: &[usize], path: KlPath, noise: &mut Stream) -> Result<f64, RlError> {
    let mut g = Graph::inference();
    let obs = g.constant(&[idx.len(), GRID, GRID, 3], batch.gather_obs(idx))?;
    let mode = match path {
        KlPath::Det => NoiseMode::Suspended,
        KlPath::Stoch => NoiseMode::Stochastic,
    };
    let out = net.forward(&mut g, obs, mode, noise)?;
    let lp = out.action_params.log_prob(&mut g, &gather(&batch.actions, idx))?;
    Ok(mean_diff(&gather(&batch.rollout_log_probs, idx), g.value(lp)))
}

/// `(mean KL to N(0, I), mean entropy of the action head)` for observations
/// `[n × 11 × 11 × 3]` under `mode`. Without a bottleneck the KL is 0 and the
/// entropy is the plain policy entropy.
pub fn ibac_aux_terms(net: &MultiroomNet, observations: &[f64], mode: NoiseMode, noise: &mut Stream) -> Result<(f64, f64), RlError> {
    let n = observations.len() / crate::gridworld::OBS_LEN;
    let mut g = Graph::inference();
    let obs = g.constant(&[n, GRID, GRID, 3], observations.to_vec())?;
    let out = net.forward(&mut g, obs, mode, noise)?;
    let h = out.action_params.entropy(&mut g)?;
    let h = g.mean(h);
    let kl = match out.latent {
        Some(l) => {
            let k = l.kl_to_standard(&mut g)?;
            let k = g.mean(k);
            g.scalar(k)
        }
        None => 0.0,
    };
    Ok((kl, g.scalar(h)))
}
