//! Straight-line PPO step for the unregularized multiroom network.
//!
//! Forward and backward passes are written out as loops over a single
//! sample, with parameters looked up by name, so the result does not share
//! any code with the graph-based trainer.

use std::collections::BTreeMap;

const SIDE: usize = 11;
const FILTERS: [usize; 4] = [3, 16, 32, 32];
const HIDDEN: usize = 64;
const ACTIONS: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct RefHyper {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_eps: f64,
    pub lambda_v: f64,
    pub lambda_h: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

/// Flat `[T × B]` rollout data, like the trainer's batch.
#[derive(Clone, Debug)]
pub struct RefBatch {
    pub n_steps: usize,
    pub n_envs: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    pub bootstrap: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RefStep {
    pub loss: f64,
    pub grads: BTreeMap<String, Vec<f64>>,
    pub grad_norm: f64,
    pub new_params: BTreeMap<String, Vec<f64>>,
}

pub fn reference_gae(b: &RefBatch, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = b.n_steps * b.n_envs;
    let mut adv = vec![0.0; n];
    for e in 0..b.n_envs {
        let mut acc = 0.0;
        for t in (0..b.n_steps).rev() {
            let i = t * b.n_envs + e;
            let next = if t + 1 == b.n_steps { b.bootstrap[e] } else { b.old_values[(t + 1) * b.n_envs + e] };
            let keep = if b.dones[i] { 0.0 } else { 1.0 };
            let delta = b.rewards[i] + gamma * keep * next - b.old_values[i];
            acc = delta + gamma * lam * keep * acc;
            adv[i] = acc;
        }
    }
    let targets = (0..n).map(|i| adv[i] + b.old_values[i]).collect();
    (adv, targets)
}

fn conv_forward(input: &[f64], side: usize, cin: usize, k: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let so = side - 1;
    let mut out = vec![0.0; so * so * cout];
    for y in 0..so {
        for x in 0..so {
            for o in 0..cout {
                let mut s = bias[o];
                for dy in 0..2 {
                    for dx in 0..2 {
                        for c in 0..cin {
                            s += input[((y + dy) * side + x + dx) * cin + c] * k[((dy * 2 + dx) * cin + c) * cout + o];
                        }
                    }
                }
                out[(y * so + x) * cout + o] = s;
            }
        }
    }
    out
}

/// Accumulates kernel/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(input: &[f64], side: usize, cin: usize, k: &[f64], cout: usize, dz: &[f64], dk: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let so = side - 1;
    let mut din = vec![0.0; side * side * cin];
    for y in 0..so {
        for x in 0..so {
            for o in 0..cout {
                let g = dz[(y * so + x) * cout + o];
                db[o] += g;
                for dy in 0..2 {
                    for dx in 0..2 {
                        for c in 0..cin {
                            let ii = ((y + dy) * side + x + dx) * cin + c;
                            let ki = ((dy * 2 + dx) * cin + c) * cout + o;
                            dk[ki] += input[ii] * g;
                            din[ii] += k[ki] * g;
                        }
                    }
                }
            }
        }
    }
    din
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// One full-batch PPO gradient step (policy, clipped value and entropy terms)
/// followed by global-norm clipping and a first Adam step.
pub fn reference_ppo_step(params: &BTreeMap<String, Vec<f64>>, batch: &RefBatch, hp: &RefHyper) -> RefStep {
    let p = |name: &str| params.get(name).unwrap_or_else(|| panic!("missing parameter {name}")).as_slice();
    let mut grads: BTreeMap<String, Vec<f64>> = params.iter().map(|(k, v)| (k.clone(), vec![0.0; v.len()])).collect();
    let (adv, targets) = reference_gae(batch, hp.gamma, hp.lambda_gae);
    let n = batch.n_steps * batch.n_envs;
    let inv_n = 1.0 / n as f64;
    let obs_len = SIDE * SIDE * 3;
    let mut loss = 0.0;

    for i in 0..n {
        // forward
        let mut acts = vec![batch.observations[i * obs_len..(i + 1) * obs_len].to_vec()];
        let mut pre = Vec::new();
        let mut side = SIDE;
        for l in 0..3 {
            let z = conv_forward(&acts[l], side, FILTERS[l], p(&format!("conv{}.kernel", l + 1)), p(&format!("conv{}.bias", l + 1)), FILTERS[l + 1]);
            acts.push(relu(&z));
            pre.push(z);
            side -= 1;
        }
        let f = &acts[3];
        let (wh, bh) = (p("hidden.weight"), p("hidden.bias"));
        let mut hz = bh.to_vec();
        for (r, &fv) in f.iter().enumerate() {
            for j in 0..HIDDEN {
                hz[j] += fv * wh[r * HIDDEN + j];
            }
        }
        let h = relu(&hz);
        let (wp, bp, wv, bv) = (p("policy.weight"), p("policy.bias"), p("value.weight"), p("value.bias"));
        let mut logits = bp.to_vec();
        let mut v = bv[0];
        for j in 0..HIDDEN {
            for a in 0..ACTIONS {
                logits[a] += h[j] * wp[j * ACTIONS + a];
            }
            v += h[j] * wv[j];
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        let logp: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let ent = -probs.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();

        let a = batch.actions[i];
        let c = (logp[a] - batch.old_log_probs[i]).exp();
        let (lo, hi) = (1.0 - hp.clip_eps, 1.0 + hp.clip_eps);
        let s1 = c * adv[i];
        let s2 = c.clamp(lo, hi) * adv[i];
        let policy_term = -s1.min(s2);
        let d_logp_a = if s1 <= s2 || (lo..=hi).contains(&c) { -adv[i] * c } else { 0.0 };

        let vr = batch.old_values[i];
        let t = targets[i];
        let dvr = v - vr;
        let dvc = dvr.clamp(-hp.clip_eps, hp.clip_eps);
        let l1 = (v - t).powi(2);
        let l2 = (vr + dvc - t).powi(2);
        let value_term = 0.5 * l1.max(l2);
        let d_v = if l1 >= l2 { v - t } else if (-hp.clip_eps..=hp.clip_eps).contains(&dvr) { vr + dvc - t } else { 0.0 };

        loss += inv_n * (policy_term + hp.lambda_v * value_term - hp.lambda_h * ent);

        // backward
        let mut dz = vec![0.0; ACTIONS];
        for j in 0..ACTIONS {
            let onehot = if j == a { 1.0 } else { 0.0 };
            dz[j] = inv_n * (d_logp_a * (onehot - probs[j]) + hp.lambda_h * probs[j] * (logp[j] + ent));
        }
        let dv = inv_n * hp.lambda_v * d_v;
        let mut dh = vec![0.0; HIDDEN];
        {
            let gp = grads.get_mut("policy.weight").unwrap();
            for j in 0..HIDDEN {
                for a2 in 0..ACTIONS {
                    gp[j * ACTIONS + a2] += h[j] * dz[a2];
                    dh[j] += wp[j * ACTIONS + a2] * dz[a2];
                }
            }
        }
        for (g, d) in grads.get_mut("policy.bias").unwrap().iter_mut().zip(&dz) {
            *g += d;
        }
        {
            let gv = grads.get_mut("value.weight").unwrap();
            for j in 0..HIDDEN {
                gv[j] += h[j] * dv;
                dh[j] += wv[j] * dv;
            }
        }
        grads.get_mut("value.bias").unwrap()[0] += dv;
        let dhz: Vec<f64> = (0..HIDDEN).map(|j| if hz[j] > 0.0 { dh[j] } else { 0.0 }).collect();
        let mut df = vec![0.0; f.len()];
        {
            let gw = grads.get_mut("hidden.weight").unwrap();
            for (r, &fv) in f.iter().enumerate() {
                for j in 0..HIDDEN {
                    gw[r * HIDDEN + j] += fv * dhz[j];
                    df[r] += wh[r * HIDDEN + j] * dhz[j];
                }
            }
        }
        for (g, d) in grads.get_mut("hidden.bias").unwrap().iter_mut().zip(&dhz) {
            *g += d;
        }
        let mut dact = df;
        for l in (0..3).rev() {
            let side_in = SIDE - l;
            let dzl: Vec<f64> = dact.iter().zip(&pre[l]).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();
            let kname = format!("conv{}.kernel", l + 1);
            let bname = format!("conv{}.bias", l + 1);
            let mut dk = std::mem::take(grads.get_mut(&kname).unwrap());
            let mut db = std::mem::take(grads.get_mut(&bname).unwrap());
            dact = conv_backward(&acts[l], side_in, FILTERS[l], p(&kname), FILTERS[l + 1], &dzl, &mut dk, &mut db);
            grads.insert(kname, dk);
            grads.insert(bname, db);
        }
    }

    let grad_norm = grads.values().flat_map(|g| g.iter()).map(|g| g * g).sum::<f64>().sqrt();
    let scale = if grad_norm > hp.clip_norm { hp.clip_norm / grad_norm } else { 1.0 };
    let mut new_params = BTreeMap::new();
    for (name, theta) in params {
        let g = &grads[name];
        let updated = theta
            .iter()
            .zip(g)
            .map(|(&th, &gr)| {
                let gr = gr * scale;
                let m_hat = (1.0 - hp.beta1) * gr / (1.0 - hp.beta1);
                let v_hat = (1.0 - hp.beta2) * gr * gr / (1.0 - hp.beta2);
                th - hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon)
            })
            .collect();
        new_params.insert(name.clone(), updated);
    }
    RefStep { loss, grads, grad_norm, new_params }
}
