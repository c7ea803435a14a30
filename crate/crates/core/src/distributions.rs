//! Categorical action distributions and diagonal-Gaussian latents.
//!
//! Both types hold graph handles for a whole batch: rows of a `[B, A]` logit
//! tensor, or `[B, d]` mean and log-std tensors. All densities, entropies and
//! divergences are differentiable graph expressions.

use rand::Rng;

use crate::diffcore::{DiffError, Graph, Var};
use crate::rng::BoxMuller;

/// Range the encoder log-std is clamped to.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 5.0;

/// A batch of categorical distributions parameterized by logits.
#[derive(Clone, Copy, Debug)]
pub struct CategoricalParams {
    pub logits: Var,
    log_probs: Var,
    n_actions: usize,
}

impl CategoricalParams {
    pub fn from_logits(g: &mut Graph, logits: Var) -> Result<Self, DiffError> {
        let log_probs = g.log_softmax(logits)?;
        let n_actions = *g.shape(logits).last().unwrap_or(&0);
        Ok(Self { logits, log_probs, n_actions })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Normalized log-probabilities, `[B, A]`.
    pub fn log_probs(&self) -> Var {
        self.log_probs
    }

    /// `log π(a_b)` per row, `[B]`.
    pub fn log_prob(&self, g: &mut Graph, actions: &[usize]) -> Result<Var, DiffError> {
        g.gather_index(self.log_probs, actions)
    }

    /// `−Σ_a p_a log p_a` per row, `[B]`.
    pub fn entropy(&self, g: &mut Graph) -> Result<Var, DiffError> {
        let p = g.exp(self.log_probs);
        let plogp = g.mul(p, self.log_probs)?;
        let s = g.sum_last(plogp)?;
        Ok(g.neg(s))
    }

    /// Probabilities of row `row`.
    pub fn probs_row(&self, g: &Graph, row: usize) -> Vec<f64> {
        let n = self.n_actions;
        g.value(self.log_probs)[row * n..(row + 1) * n].iter().map(|l| l.exp()).collect()
    }

    /// One action per row, by inverse-CDF sampling from the row's softmax.
    pub fn sample<R: Rng + ?Sized>(&self, g: &Graph, rng: &mut R) -> Vec<usize> {
        let rows = g.value(self.log_probs).len() / self.n_actions.max(1);
        (0..rows).map(|r| sample_from_probs(&self.probs_row(g, r), rng)).collect()
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_from_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding can leave u just above the final partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// A batch of diagonal Gaussians `N(mean, exp(log_std)²)`.
#[derive(Clone, Copy, Debug)]
pub struct DiagGaussianParams {
    pub mean: Var,
    pub log_std: Var,
}

impl DiagGaussianParams {
    /// Builds the distribution, clamping `raw_log_std` to
    /// `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn new(g: &mut Graph, mean: Var, raw_log_std: Var) -> Result<Self, DiffError> {
        if g.shape(mean) != g.shape(raw_log_std) {
            return Err(DiffError::ShapeMismatch { op: "diag_gaussian", lhs: g.shape(mean).to_vec(), rhs: g.shape(raw_log_std).to_vec() });
        }
        let log_std = g.clip_value(raw_log_std, LOG_STD_MIN, LOG_STD_MAX);
        Ok(Self { mean, log_std })
    }

    /// Uses `log_std` as given, without clamping.
    pub fn unclamped(mean: Var, log_std: Var) -> Self {
        Self { mean, log_std }
    }

    /// `mean + exp(log_std) ⊙ ε` with `ε ~ N(0, I)` entering as a constant.
    pub fn reparam_sample<R: Rng + ?Sized>(&self, g: &mut Graph, rng: &mut R) -> Result<Var, DiffError> {
        let shape = g.shape(self.mean).to_vec();
        let mut eps = vec![0.0; g.value(self.mean).len()];
        BoxMuller::new().fill(rng, &mut eps);
        let eps = g.constant(&shape, eps)?;
        self.sample_with_noise(g, eps)
    }

    /// Reparameterized sample for a caller-supplied standard-normal tensor.
    pub fn sample_with_noise(&self, g: &mut Graph, eps: Var) -> Result<Var, DiffError> {
        let std = g.exp(self.log_std);
        let scaled = g.mul(std, eps)?;
        g.add(self.mean, scaled)
    }

    /// The mode, i.e. the mean.
    pub fn mode(&self) -> Var {
        self.mean
    }

    /// `KL[N(mean, std²) ‖ N(0, I)]` per row, `[B]`:
    /// `Σ_i ½(mean_i² + std_i² − 1 − 2·log_std_i)`.
    pub fn kl_to_standard(&self, g: &mut Graph) -> Result<Var, DiffError> {
        let m2 = g.square(self.mean);
        let two_ls = g.scale(self.log_std, 2.0);
        let var = g.exp(two_ls);
        let a = g.add(m2, var)?;
        let b = g.sub(a, two_ls)?;
        let one = g.scalar_constant(1.0);
        let c = g.sub(b, one)?;
        let s = g.sum_last(c)?;
        Ok(g.scale(s, 0.5))
    }
}

/// Plain-number helpers for diagonal Gaussians.
pub mod gaussian {
    use std::f64::consts::PI;

    pub fn log_density(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
        x.iter()
            .zip(mean)
            .zip(log_std)
            .map(|((&x, &m), &ls)| {
                let z = (x - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }

    pub fn entropy(log_std: &[f64]) -> f64 {
        log_std.iter().map(|&ls| 0.5 * (2.0 * PI * std::f64::consts::E).ln() + ls).sum()
    }

    /// `KL[N(m1, s1²) ‖ N(m2, s2²)]`, diagonal.
    pub fn kl(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
        (0..mean_p.len())
            .map(|i| {
                let (sp2, sq2) = ((2.0 * log_std_p[i]).exp(), (2.0 * log_std_q[i]).exp());
                log_std_q[i] - log_std_p[i] + (sp2 + (mean_p[i] - mean_q[i]).powi(2)) / (2.0 * sq2) - 0.5
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;

    fn cat(g: &mut Graph, logits: &[f64]) -> CategoricalParams {
        let l = g.variable(&[1, logits.len()], logits.to_vec()).unwrap();
        CategoricalParams::from_logits(g, l).unwrap()
    }

    #[test]
    fn log_prob_examples() {
        let mut g = Graph::new();
        let c = cat(&mut g, &[0.0; 4]);
        let lp = c.log_prob(&mut g, &[2]).unwrap();
        assert!((g.value(lp)[0] - (0.25f64).ln()).abs() < 1e-12);

        let mut g = Graph::new();
        let c = cat(&mut g, &[10.0, 0.0]);
        let lp = c.log_prob(&mut g, &[0]).unwrap();
        // direct softmax evaluation: −ln(1 + e^{−10})
        let want = -(1.0 + (-10.0f64).exp()).ln();
        assert!((g.value(lp)[0] - want).abs() < 1e-15);
        assert!((g.value(lp)[0] + 4.54e-5).abs() < 1e-7);

        let total: f64 = c.probs_row(&g, 0).iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_action_rejected() {
        let mut g = Graph::new();
        let c = cat(&mut g, &[0.0; 3]);
        assert!(c.log_prob(&mut g, &[3]).is_err());
    }

    #[test]
    fn entropy_examples() {
        for (logits, want) in [(vec![0.0; 4], 4f64.ln()), (vec![1.5, 1.5], 2f64.ln()), (vec![100.0, 0.0], 0.0)] {
            let mut g = Graph::new();
            let c = cat(&mut g, &logits);
            let h = c.entropy(&mut g).unwrap();
            assert!((g.value(h)[0] - want).abs() < 1e-9, "{logits:?}");
        }
    }

    #[test]
    fn sampling_frequencies() {
        let mut g = Graph::inference();
        let c = cat(&mut g, &[100.0, 0.0, 0.0]);
        let mut rng = stream_from_seed(1);
        let hits = (0..10_000).filter(|_| c.sample(&g, &mut rng)[0] == 0).count();
        assert!(hits as f64 / 1e4 > 0.999);

        let c = cat(&mut g, &[0.0; 4]);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[c.sample(&g, &mut rng)[0]] += 1;
        }
        for k in counts {
            assert!((k as f64 / 1e4 - 0.25).abs() < 0.02);
        }

        let a: Vec<usize> = (0..50).map(|_| 0).scan(stream_from_seed(9), |r, _| Some(c.sample(&g, r)[0])).collect();
        let b: Vec<usize> = (0..50).map(|_| 0).scan(stream_from_seed(9), |r, _| Some(c.sample(&g, r)[0])).collect();
        assert_eq!(a, b);
    }

    fn gauss(g: &mut Graph, mean: &[f64], log_std: &[f64]) -> (Var, Var, DiagGaussianParams) {
        let d = mean.len();
        let m = g.variable(&[1, d], mean.to_vec()).unwrap();
        let s = g.variable(&[1, d], log_std.to_vec()).unwrap();
        (m, s, DiagGaussianParams::unclamped(m, s))
    }

    #[test]
    fn kl_examples() {
        for (m, ls, want) in [(0.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.0, 2f64.ln(), 1.5 - 2f64.ln())] {
            let mut g = Graph::new();
            let (_, _, p) = gauss(&mut g, &[m], &[ls]);
            let kl = p.kl_to_standard(&mut g).unwrap();
            assert!((g.value(kl)[0] - want).abs() < 1e-12);
        }
        assert!((1.5 - 2f64.ln() - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kl_gradient_wrt_mean_is_mean() {
        let mean = [0.3, -1.2, 2.5];
        let mut g = Graph::new();
        let (m, _, p) = gauss(&mut g, &mean, &[0.1, -0.4, 0.0]);
        let kl = p.kl_to_standard(&mut g).unwrap();
        let s = g.sum(kl);
        g.backward(s).unwrap();
        assert_eq!(g.grad(m), mean.to_vec());
    }

    #[test]
    fn reparam_sample_properties() {
        let mut rng = stream_from_seed(5);
        let mut g = Graph::new();
        let (m, s, p) = gauss(&mut g, &[1.5, -0.5], &[-20.0, -20.0]);
        let z = p.reparam_sample(&mut g, &mut rng).unwrap();
        assert!((g.value(z)[0] - 1.5).abs() < 1e-6 && (g.value(z)[1] + 0.5).abs() < 1e-6);
        let sum = g.sum(z);
        g.backward(sum).unwrap();
        assert_eq!(g.grad(m), vec![1.0, 1.0]);
        assert!(g.grad(s).iter().all(|v| v.abs() < 1e-6));

        let mut g = Graph::inference();
        let n = 100_000;
        let m = g.constant(&[n, 1], vec![0.0; n]).unwrap();
        let s = g.constant(&[n, 1], vec![0.0; n]).unwrap();
        let z = DiagGaussianParams::unclamped(m, s).reparam_sample(&mut g, &mut rng).unwrap();
        let avg = g.value(z).iter().sum::<f64>() / n as f64;
        assert!(avg.abs() < 0.01);
    }

    #[test]
    fn mode_ignores_log_std() {
        let mut g = Graph::new();
        let (_, s, p) = gauss(&mut g, &[1.0, 2.0], &[0.7, -0.3]);
        assert_eq!(g.value(p.mode()), &[1.0, 2.0]);
        let total = g.sum(p.mode());
        g.backward(total).unwrap();
        assert_eq!(g.grad(s), vec![0.0, 0.0]);
    }

    #[test]
    fn clamp_bounds_log_std() {
        let mut g = Graph::new();
        let m = g.variable(&[1, 2], vec![0.0, 0.0]).unwrap();
        let s = g.variable(&[1, 2], vec![-50.0, 50.0]).unwrap();
        let p = DiagGaussianParams::new(&mut g, m, s).unwrap();
        assert_eq!(g.value(p.log_std), &[LOG_STD_MIN, LOG_STD_MAX]);
    }
}
