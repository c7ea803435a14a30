//! Adam with decoupled weight decay, and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Decoupled decay coefficient: `θ ← (1 − lr·λ_w)·θ` before the Adam step.
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm clip applied before every step.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0, clip_norm: None }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_clip_norm(mut self, clip_norm: f64) -> Self {
        self.clip_norm = Some(clip_norm);
        self
    }
}

/// What one call to [`AdamState::step`] did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping (NaN when skipped).
    pub grad_norm: f64,
    /// The gradient was not finite and no update was applied.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value().len()]).collect();
        Self { config, step_count: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one update from the gradients stored in `params`.
    ///
    /// Non-finite gradients skip the update entirely (the step count does not
    /// advance). Otherwise gradients are clipped, weights decayed, and the
    /// bias-corrected Adam delta applied.
    pub fn step(&mut self, params: &mut ParamStore) -> StepReport {
        assert_eq!(params.len(), self.first_moment.len(), "optimizer state does not match parameters");
        if params.iter().any(|p| p.grad().iter().any(|g| !g.is_finite())) {
            log::warn!("non-finite gradient; skipping optimizer step {}", self.step_count + 1);
            return StepReport { grad_norm: f64::NAN, skipped: true };
        }
        let grad_norm = match self.config.clip_norm {
            Some(max) => clip_grad_global_norm(params, max),
            None => global_grad_norm(params),
        };
        self.step_count += 1;
        let AdamConfig { learning_rate: lr, beta1, beta2, epsilon, weight_decay, .. } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for ((p, m), v) in params.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            let (theta, grad) = p.split_mut();
            for i in 0..theta.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                if weight_decay != 0.0 {
                    theta[i] *= decay;
                }
                theta[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        StepReport { grad_norm, skipped: false }
    }
}

pub fn global_grad_norm(params: &ParamStore) -> f64 {
    params.iter().flat_map(|p| p.grad().iter()).map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_global_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_grad_norm(params);
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64], grads: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", &[values.len()], values.to_vec());
        s.get_mut(id).grad_mut().copy_from_slice(grads);
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store(&[1.0], &[0.1]);
        let mut opt = AdamState::new(AdamConfig::new(1e-3), &s);
        opt.step(&mut s);
        let delta = s.get(super::super::params::ParamId(0)).value()[0] - 1.0;
        assert!((delta + 1e-3).abs() < 1e-9, "{delta}");
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut s = store(&[1.5, -2.0], &[0.0, 0.0]);
        let before = s.flat_values();
        let mut opt = AdamState::new(AdamConfig::new(1e-3), &s);
        for _ in 0..5 {
            opt.step(&mut s);
        }
        assert_eq!(s.flat_values(), before);
    }

    #[test]
    fn decay_only_step_is_exact() {
        let mut s = store(&[1.5, -2.0], &[0.0, 0.0]);
        let mut opt = AdamState::new(AdamConfig::new(7e-4).with_weight_decay(1e-3), &s);
        opt.step(&mut s);
        let f = 1.0 - 7e-4 * 1e-3;
        assert_eq!(s.flat_values(), vec![1.5 * f, -2.0 * f]);
    }

    #[test]
    fn decay_is_geometric() {
        let mut s = store(&[3.0, 4.0], &[0.0, 0.0]);
        let cfg = AdamConfig::new(1e-2).with_weight_decay(0.5);
        let mut opt = AdamState::new(cfg, &s);
        let f: f64 = 1.0 - 1e-2 * 0.5;
        for k in 1..=10 {
            opt.step(&mut s);
            let norm = s.flat_values().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 5.0 * f.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_gradient_skips_update() {
        let mut s = store(&[1.0, 2.0], &[f64::NAN, 0.1]);
        let mut opt = AdamState::new(AdamConfig::new(1e-3), &s);
        let r = opt.step(&mut s);
        assert!(r.skipped);
        assert_eq!(opt.step_count(), 0);
        assert_eq!(s.flat_values(), vec![1.0, 2.0]);
    }

    #[test]
    fn clipping_cases() {
        let mut s = store(&[0.0, 0.0], &[0.6, 0.8]);
        assert_eq!(clip_grad_global_norm(&mut s, 0.5), 1.0);
        let g = s.flat_grad();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);

        let mut s = store(&[0.0, 0.0], &[0.18, 0.24]);
        let n = clip_grad_global_norm(&mut s, 0.5);
        assert!((n - 0.3).abs() < 1e-15);
        assert_eq!(s.flat_grad(), vec![0.18, 0.24]);

        let mut s = store(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(clip_grad_global_norm(&mut s, 0.5), 0.0);
        assert_eq!(s.flat_grad(), vec![0.0, 0.0]);
    }
}
