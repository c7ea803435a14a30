//! Network building blocks with a noise-suspension switch.
//!
//! Every stochastic component takes a [`NoiseMode`]. `Stochastic` injects
//! fresh noise; `Suspended` evaluates the noise-free ("bar") path, which for
//! the bottleneck is the posterior mode and for dropout is the frozen mask;
//! `Frozen` re-uses the stored dropout mask explicitly.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Graph, ParamId, ParamStore, Var};
use crate::distributions::{CategoricalParams, DiagGaussianParams};
use crate::rng::{stream_from_seed, BoxMuller};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Stochastic,
    Suspended,
    Frozen,
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("dropout layer `{0}` has no frozen mask")]
    NoFrozenMask(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Orthogonal matrix of shape `[rows, cols]` scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let mut bm = BoxMuller::new();
    let data: Vec<f64> = (0..tall * short).map(|_| bm.sample(rng)).collect();
    let a = DMatrix::from_row_slice(tall, short, &data);
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut dyn RngCore) -> Self {
        let weight = store.add(format!("{name}.weight"), &[fan_in, fan_out], orthogonal(fan_in, fan_out, gain, rng));
        let bias = store.add(format!("{name}.bias"), &[fan_out], vec![0.0; fan_out]);
        Self { weight, bias, fan_in, fan_out }
    }

    /// `x · W + b` for `x: [B, fan_in]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// 2D valid convolution, channel-last.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, k: usize, gain: f64, rng: &mut dyn RngCore) -> Self {
        let kernel = store.add(format!("{name}.kernel"), &[k, k, in_ch, out_ch], orthogonal(k * k * in_ch, out_ch, gain, rng));
        let bias = store.add(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch]);
        Self { kernel, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        let y = g.conv2d_valid(x, k)?;
        g.add(y, b)
    }
}

/// 1D valid convolution, channel-last.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, k: usize, gain: f64, rng: &mut dyn RngCore) -> Self {
        let kernel = store.add(format!("{name}.kernel"), &[k, in_ch, out_ch], orthogonal(k * in_ch, out_ch, gain, rng));
        let bias = store.add(format!("{name}.bias"), &[out_ch], vec![0.0; out_ch]);
        Self { kernel, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        let y = g.conv1d_valid(x, k)?;
        g.add(y, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrozenMask {
    pub seed: Option<u64>,
    /// Per-unit multiplier: `0` or `1/(1 − rate)`.
    pub mask: Vec<f64>,
}

/// Inverted dropout over the last axis of a `[B, width]` activation.
///
/// Stochastic passes draw an independent mask per element. The frozen mask
/// has one entry per unit and is shared by every row of every pass until the
/// layer is re-frozen.
#[derive(Clone, Debug)]
pub struct DropoutLayer {
    pub name: String,
    pub rate: f64,
    pub width: usize,
    frozen: Option<FrozenMask>,
}

impl DropoutLayer {
    pub fn new(name: impl Into<String>, rate: f64, width: usize) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        Self { name: name.into(), rate, width, frozen: None }
    }

    pub fn frozen(&self) -> Option<&FrozenMask> {
        self.frozen.as_ref()
    }

    fn draw(&self, n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..n).map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep }).collect()
    }

    /// Samples and stores one mask.
    pub fn freeze_with_rng(&mut self, rng: &mut dyn RngCore) {
        let mask = self.draw(self.width, rng);
        self.frozen = Some(FrozenMask { seed: None, mask });
    }

    /// Samples and stores the mask determined by `seed`.
    pub fn freeze(&mut self, seed: u64) {
        let mut rng = stream_from_seed(seed);
        self.freeze_with_rng(&mut rng);
        if let Some(f) = &mut self.frozen {
            f.seed = Some(seed);
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mode: NoiseMode, rng: &mut dyn RngCore) -> Result<Var, NetError> {
        match mode {
            NoiseMode::Stochastic => {
                if self.rate == 0.0 {
                    return Ok(x);
                }
                let shape = g.shape(x).to_vec();
                let mask = self.draw(g.value(x).len(), rng);
                let m = g.constant(&shape, mask)?;
                Ok(g.mul(x, m)?)
            }
            NoiseMode::Suspended | NoiseMode::Frozen => {
                let frozen = self.frozen.as_ref().ok_or_else(|| NetError::NoFrozenMask(self.name.clone()))?;
                if self.rate == 0.0 {
                    return Ok(x);
                }
                let m = g.constant(&[self.width], frozen.mask.clone())?;
                Ok(g.mul(x, m)?)
            }
        }
    }
}

/// Variational bottleneck: dense encoders for the latent mean and log-std.
#[derive(Clone, Debug)]
pub struct BottleneckLayer {
    pub mean: Dense,
    pub log_std: Dense,
    pub d_z: usize,
}

impl BottleneckLayer {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, d_z: usize, rng: &mut dyn RngCore) -> Self {
        let mean = Dense::new(store, &format!("{name}.mean"), fan_in, d_z, 1.0, rng);
        let log_std = Dense::new(store, &format!("{name}.log_std"), fan_in, d_z, 0.01, rng);
        Self { mean, log_std, d_z }
    }

    /// Posterior parameters for input `x`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<DiagGaussianParams, DiffError> {
        let m = self.mean.forward(g, store, x)?;
        let s = self.log_std.forward(g, store, x)?;
        DiagGaussianParams::new(g, m, s)
    }

    /// Latent for an already-encoded posterior.
    pub fn latent(latent: &DiagGaussianParams, g: &mut Graph, mode: NoiseMode, rng: &mut dyn RngCore) -> Result<Var, DiffError> {
        match mode {
            NoiseMode::Stochastic => latent.reparam_sample(g, rng),
            NoiseMode::Suspended | NoiseMode::Frozen => Ok(latent.mode()),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: NoiseMode, rng: &mut dyn RngCore) -> Result<(Var, DiagGaussianParams), DiffError> {
        let latent = self.encode(g, store, x)?;
        let z = Self::latent(&latent, g, mode, rng)?;
        Ok((z, latent))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiroomArch {
    Baseline,
    Dropout,
    Ibac,
}

impl MultiroomArch {
    pub fn name(self) -> &'static str {
        match self {
            MultiroomArch::Baseline => "baseline",
            MultiroomArch::Dropout => "dropout",
            MultiroomArch::Ibac => "ibac",
        }
    }
}

/// Per-state bundle produced by the policy network.
#[derive(Clone, Copy, Debug)]
pub struct PolicyHeadOutput {
    pub action_params: CategoricalParams,
    /// State values, `[B]`.
    pub value: Var,
    pub latent: Option<DiagGaussianParams>,
    /// The representation both heads read, `[B, 64]`.
    pub z_used: Var,
}

/// Noise-free part of the hidden layer, shared by all noise modes.
#[derive(Clone, Copy, Debug)]
pub enum Encoded {
    Hidden(Var),
    Latent(DiagGaussianParams),
}

pub const OBS_SIDE: usize = 11;
pub const OBS_CHANNELS: usize = 3;
pub const MULTIROOM_HIDDEN: usize = 64;
pub const MULTIROOM_ACTIONS: usize = 4;
pub const MULTIROOM_DROPOUT: f64 = 0.2;

/// Conv(16, 32, 32; kernel 2) → one 64-unit hidden layer → policy and value heads.
#[derive(Clone, Debug)]
pub struct MultiroomNet {
    pub arch: MultiroomArch,
    pub store: ParamStore,
    convs: Vec<Conv2d>,
    hidden: Option<Dense>,
    pub dropout: Option<DropoutLayer>,
    bottleneck: Option<BottleneckLayer>,
    policy: Dense,
    value: Dense,
}

impl MultiroomNet {
    pub fn build(arch: MultiroomArch, rng: &mut dyn RngCore) -> Self {
        let mut store = ParamStore::new();
        let filters = [OBS_CHANNELS, 16, 32, 32];
        let convs: Vec<Conv2d> = (0..3).map(|i| Conv2d::new(&mut store, &format!("conv{}", i + 1), filters[i], filters[i + 1], 2, RELU_GAIN, rng)).collect();
        let side = OBS_SIDE - 3;
        let flat = side * side * 32;
        let (hidden, dropout, bottleneck) = match arch {
            MultiroomArch::Baseline => (Some(Dense::new(&mut store, "hidden", flat, MULTIROOM_HIDDEN, RELU_GAIN, rng)), None, None),
            MultiroomArch::Dropout => (
                Some(Dense::new(&mut store, "hidden", flat, MULTIROOM_HIDDEN, RELU_GAIN, rng)),
                Some(DropoutLayer::new("hidden.dropout", MULTIROOM_DROPOUT, MULTIROOM_HIDDEN)),
                None,
            ),
            MultiroomArch::Ibac => (None, None, Some(BottleneckLayer::new(&mut store, "bottleneck", flat, MULTIROOM_HIDDEN, rng))),
        };
        let policy = Dense::new(&mut store, "policy", MULTIROOM_HIDDEN, MULTIROOM_ACTIONS, 0.01, rng);
        let value = Dense::new(&mut store, "value", MULTIROOM_HIDDEN, 1, 1.0, rng);
        Self { arch, store, convs, hidden, dropout, bottleneck, policy, value }
    }

    pub fn n_actions(&self) -> usize {
        MULTIROOM_ACTIONS
    }

    /// Freezes the dropout mask (no-op for other architectures).
    pub fn freeze_dropout_mask(&mut self, seed: u64) {
        if let Some(d) = &mut self.dropout {
            d.freeze(seed);
        }
    }

    pub fn frozen_mask_seed(&self) -> Option<u64> {
        self.dropout.as_ref().and_then(|d| d.frozen()).and_then(|f| f.seed)
    }

    /// Convolutional features, `[B, 2048]`, for observations `[B, 11, 11, 3]`.
    pub fn trunk(&self, g: &mut Graph, obs: Var) -> Result<Var, DiffError> {
        let mut x = obs;
        for c in &self.convs {
            let y = c.forward(g, &self.store, x)?;
            x = g.relu(y);
        }
        g.flatten(x)
    }

    pub fn encode(&self, g: &mut Graph, trunk: Var) -> Result<Encoded, DiffError> {
        match (&self.hidden, &self.bottleneck) {
            (Some(h), _) => {
                let pre = h.forward(g, &self.store, trunk)?;
                Ok(Encoded::Hidden(g.relu(pre)))
            }
            (None, Some(b)) => Ok(Encoded::Latent(b.encode(g, &self.store, trunk)?)),
            (None, None) => unreachable!("network has neither hidden layer nor bottleneck"),
        }
    }

    /// Heads evaluated on an explicit representation.
    pub fn decode_from_z(&self, g: &mut Graph, z: Var) -> Result<(CategoricalParams, Var), DiffError> {
        let logits = self.policy.forward(g, &self.store, z)?;
        let action = CategoricalParams::from_logits(g, logits)?;
        let v = self.value.forward(g, &self.store, z)?;
        let b = g.shape(v)[0];
        let value = g.reshape(v, &[b])?;
        Ok((action, value))
    }

    pub fn decode(&self, g: &mut Graph, enc: &Encoded, mode: NoiseMode, rng: &mut dyn RngCore) -> Result<PolicyHeadOutput, NetError> {
        let (z, latent) = match *enc {
            Encoded::Hidden(h) => match &self.dropout {
                Some(d) => (d.forward(g, h, mode, rng)?, None),
                None => (h, None),
            },
            Encoded::Latent(l) => (BottleneckLayer::latent(&l, g, mode, rng)?, Some(l)),
        };
        let (action_params, value) = self.decode_from_z(g, z)?;
        Ok(PolicyHeadOutput { action_params, value, latent, z_used: z })
    }

    pub fn forward(&self, g: &mut Graph, obs: Var, mode: NoiseMode, rng: &mut dyn RngCore) -> Result<PolicyHeadOutput, NetError> {
        let t = self.trunk(g, obs)?;
        let e = self.encode(g, t)?;
        self.decode(g, &e, mode, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisedArch {
    Baseline,
    #[serde(rename = "wdecay")]
    WeightDecay,
    Dropout,
    Vib,
}

impl SupervisedArch {
    pub const ALL: [SupervisedArch; 4] = [SupervisedArch::Baseline, SupervisedArch::WeightDecay, SupervisedArch::Dropout, SupervisedArch::Vib];

    pub fn name(self) -> &'static str {
        match self {
            SupervisedArch::Baseline => "baseline",
            SupervisedArch::WeightDecay => "wdecay",
            SupervisedArch::Dropout => "dropout",
            SupervisedArch::Vib => "vib",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedShape {
    pub d_x: usize,
    pub n_classes: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout_rate: f64,
}

impl Default for SupervisedShape {
    fn default() -> Self {
        Self { d_x: 100, n_classes: 5, conv_filters: 10, conv_kernel: 11, hidden1: 1024, hidden2: 256, dropout_rate: 0.2 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SupervisedOutput {
    pub logits: Var,
    pub latent: Option<DiagGaussianParams>,
}

/// Conv1d(10, kernel 11) → 1024 → 256 → logits; dropout or the bottleneck
/// act on the 256-unit layer.
#[derive(Clone, Debug)]
pub struct SupervisedNet {
    pub arch: SupervisedArch,
    pub shape: SupervisedShape,
    pub store: ParamStore,
    conv: Conv1d,
    fc1: Dense,
    fc2: Option<Dense>,
    pub dropout: Option<DropoutLayer>,
    bottleneck: Option<BottleneckLayer>,
    out: Dense,
}

impl SupervisedNet {
    pub fn build(arch: SupervisedArch, rng: &mut dyn RngCore) -> Self {
        Self::build_with_shape(arch, SupervisedShape::default(), rng)
    }

    pub fn build_with_shape(arch: SupervisedArch, shape: SupervisedShape, rng: &mut dyn RngCore) -> Self {
        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, "conv", 1, shape.conv_filters, shape.conv_kernel, RELU_GAIN, rng);
        let flat = (shape.d_x - shape.conv_kernel + 1) * shape.conv_filters;
        let fc1 = Dense::new(&mut store, "fc1", flat, shape.hidden1, RELU_GAIN, rng);
        let (fc2, bottleneck) = if arch == SupervisedArch::Vib {
            (None, Some(BottleneckLayer::new(&mut store, "bottleneck", shape.hidden1, shape.hidden2, rng)))
        } else {
            (Some(Dense::new(&mut store, "fc2", shape.hidden1, shape.hidden2, RELU_GAIN, rng)), None)
        };
        let dropout = (arch == SupervisedArch::Dropout).then(|| DropoutLayer::new("fc2.dropout", shape.dropout_rate, shape.hidden2));
        let out = Dense::new(&mut store, "out", shape.hidden2, shape.n_classes, 1.0, rng);
        Self { arch, shape, store, conv, fc1, fc2, dropout, bottleneck, out }
    }

    /// Logits for `x: [B, d_x]`.
    ///
    /// Dropout at evaluation time (`Suspended`) is the identity unless a mask
    /// has been frozen; inverted scaling keeps activations unbiased.
    pub fn forward(&self, g: &mut Graph, x: Var, mode: NoiseMode, rng: &mut dyn RngCore) -> Result<SupervisedOutput, NetError> {
        let b = g.shape(x)[0];
        let x3 = g.reshape(x, &[b, self.shape.d_x, 1])?;
        let c = self.conv.forward(g, &self.store, x3)?;
        let c = g.relu(c);
        let flat = g.flatten(c)?;
        let h1 = self.fc1.forward(g, &self.store, flat)?;
        let h1 = g.relu(h1);
        let (h2, latent) = match (&self.fc2, &self.bottleneck) {
            (Some(fc2), _) => {
                let h = fc2.forward(g, &self.store, h1)?;
                let h = g.relu(h);
                let h = match (&self.dropout, mode) {
                    (Some(d), NoiseMode::Stochastic) => d.forward(g, h, mode, rng)?,
                    (Some(d), _) if d.frozen().is_some() => d.forward(g, h, mode, rng)?,
                    _ => h,
                };
                (h, None)
            }
            (None, Some(bn)) => {
                let (z, l) = bn.forward(g, &self.store, h1, mode, rng)?;
                (z, Some(l))
            }
            (None, None) => unreachable!("network has neither fc2 nor bottleneck"),
        };
        let logits = self.out.forward(g, &self.store, h2)?;
        Ok(SupervisedOutput { logits, latent })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;

    #[test]
    fn orthogonal_columns() {
        let mut rng = stream_from_seed(0);
        for (r, c) in [(6, 3), (3, 6), (5, 5)] {
            let w = orthogonal(r, c, 1.0, &mut rng);
            let m = DMatrix::from_row_slice(r, c, &w);
            let gram = if r >= c { m.transpose() * &m } else { &m * m.transpose() };
            let eye = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
            assert!((gram - eye).abs().max() < 1e-12);
        }
    }

    fn input(g: &mut Graph, rows: usize, width: usize, seed: u64) -> (Var, Vec<f64>) {
        let mut rng = stream_from_seed(seed);
        let v: Vec<f64> = (0..rows * width).map(|_| rng.gen::<f64>() + 0.5).collect();
        (g.constant(&[rows, width], v.clone()).unwrap(), v)
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut d = DropoutLayer::new("d", 0.0, 8);
        d.freeze(1);
        let mut g = Graph::inference();
        let (x, v) = input(&mut g, 3, 8, 2);
        let mut rng = stream_from_seed(3);
        for mode in [NoiseMode::Stochastic, NoiseMode::Suspended, NoiseMode::Frozen] {
            let y = d.forward(&mut g, x, mode, &mut rng).unwrap();
            assert_eq!(g.value(y), &v[..]);
        }
    }

    #[test]
    fn frozen_requires_mask_and_is_reused() {
        let mut d = DropoutLayer::new("d", 0.2, 16);
        let mut g = Graph::inference();
        let (x, _) = input(&mut g, 4, 16, 2);
        let mut rng = stream_from_seed(3);
        assert!(matches!(d.forward(&mut g, x, NoiseMode::Frozen, &mut rng), Err(NetError::NoFrozenMask(_))));
        d.freeze(11);
        let first = d.forward(&mut g, x, NoiseMode::Frozen, &mut rng).unwrap();
        let first = g.value(first).to_vec();
        for _ in 0..10 {
            let y = d.forward(&mut g, x, NoiseMode::Frozen, &mut rng).unwrap();
            assert_eq!(g.value(y), &first[..]);
        }
        let s = d.forward(&mut g, x, NoiseMode::Suspended, &mut rng).unwrap();
        assert_eq!(g.value(s), &first[..]);

        let m11 = d.frozen().unwrap().mask.clone();
        d.freeze(12);
        let m12 = d.frozen().unwrap().mask.clone();
        d.freeze(11);
        assert_eq!(d.frozen().unwrap().mask, m11);
        assert!(m11.iter().zip(&m12).filter(|(a, b)| a != b).count() > 0);
    }

    #[test]
    fn stochastic_dropout_frequency() {
        let d = DropoutLayer::new("d", 0.2, 1000);
        let mut g = Graph::inference();
        let x = g.constant(&[100, 1000], vec![1.0; 100_000]).unwrap();
        let mut rng = stream_from_seed(4);
        let y = d.forward(&mut g, x, NoiseMode::Stochastic, &mut rng).unwrap();
        let zeros = g.value(y).iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.2).abs() < 0.005, "{zeros}");
        assert!(g.value(y).iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn bottleneck_modes() {
        let mut rng = stream_from_seed(0);
        let mut store = ParamStore::new();
        let bn = BottleneckLayer::new(&mut store, "b", 6, 4, &mut rng);
        let mut g = Graph::new();
        let (x, _) = input(&mut g, 2, 6, 1);
        let (z1, l1) = bn.forward(&mut g, &store, x, NoiseMode::Suspended, &mut rng).unwrap();
        let (z2, _) = bn.forward(&mut g, &store, x, NoiseMode::Suspended, &mut rng).unwrap();
        assert_eq!(g.value(z1), g.value(z2));
        assert_eq!(g.value(z1), g.value(l1.mean));
        let s = g.sum(z1);
        g.backward(s).unwrap();
        g.accumulate_param_grads(&mut store);
        assert!(store.get(bn.log_std.weight).grad().iter().all(|&v| v == 0.0));
        assert!(store.get(bn.mean.weight).grad().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn bottleneck_floor_std_matches_mode() {
        let mut rng = stream_from_seed(0);
        let mut store = ParamStore::new();
        let bn = BottleneckLayer::new(&mut store, "b", 6, 4, &mut rng);
        // drive log_std to the clamp floor
        let bias = bn.log_std.bias;
        store.get_mut(bias).value_mut().iter_mut().for_each(|v| *v = -100.0);
        let mut g = Graph::inference();
        let (x, _) = input(&mut g, 2, 6, 1);
        let (zs, _) = bn.forward(&mut g, &store, x, NoiseMode::Stochastic, &mut rng).unwrap();
        let (zm, _) = bn.forward(&mut g, &store, x, NoiseMode::Suspended, &mut rng).unwrap();
        for (a, b) in g.value(zs).iter().zip(g.value(zm)) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    fn obs(g: &mut Graph, b: usize, seed: u64) -> Var {
        let mut rng = stream_from_seed(seed);
        let v: Vec<f64> = (0..b * 363).map(|_| (rng.gen::<f64>() * 4.0).floor() / 4.0).collect();
        g.constant(&[b, 11, 11, 3], v).unwrap()
    }

    #[test]
    fn multiroom_shapes_and_determinism() {
        for arch in [MultiroomArch::Baseline, MultiroomArch::Dropout, MultiroomArch::Ibac] {
            let mut net = MultiroomNet::build(arch, &mut stream_from_seed(1));
            let net2 = MultiroomNet::build(arch, &mut stream_from_seed(2));
            assert_eq!(net.store.numel(), net2.store.numel());
            net.freeze_dropout_mask(5);
            let mut g = Graph::inference();
            let o = obs(&mut g, 3, 9);
            let mut rng = stream_from_seed(0);
            let a = net.forward(&mut g, o, NoiseMode::Suspended, &mut rng).unwrap();
            let b = net.forward(&mut g, o, NoiseMode::Suspended, &mut rng).unwrap();
            assert_eq!(g.shape(a.action_params.logits), &[3, 4]);
            assert_eq!(g.shape(a.value), &[3]);
            assert_eq!(g.shape(a.z_used), &[3, 64]);
            assert_eq!(a.latent.is_some(), arch == MultiroomArch::Ibac);
            if let Some(l) = a.latent {
                assert_eq!(g.shape(l.mean), &[3, 64]);
            }
            assert_eq!(g.value(a.action_params.logits), g.value(b.action_params.logits));
            assert_eq!(g.value(a.value), g.value(b.value));
            if arch == MultiroomArch::Baseline {
                let s = net.forward(&mut g, o, NoiseMode::Stochastic, &mut rng).unwrap();
                assert_eq!(g.value(s.action_params.logits), g.value(a.action_params.logits));
            }
        }
    }

    #[test]
    fn ibac_heads_depend_only_on_z() {
        let net = MultiroomNet::build(MultiroomArch::Ibac, &mut stream_from_seed(1));
        let mut g = Graph::inference();
        let o1 = obs(&mut g, 2, 1);
        let o2 = obs(&mut g, 2, 2);
        let mut rng = stream_from_seed(0);
        let a = net.forward(&mut g, o1, NoiseMode::Suspended, &mut rng).unwrap();
        let b = net.forward(&mut g, o2, NoiseMode::Suspended, &mut rng).unwrap();
        assert_ne!(g.value(a.latent.unwrap().log_std), g.value(b.latent.unwrap().log_std));
        // same z, different encoder outputs: heads agree
        let z = g.value(a.z_used).to_vec();
        let z = g.constant(&[2, 64], z).unwrap();
        let (act, val) = net.decode_from_z(&mut g, z).unwrap();
        assert_eq!(g.value(act.logits), g.value(a.action_params.logits));
        assert_eq!(g.value(val), g.value(a.value));
    }

    #[test]
    fn supervised_shapes_and_dropout_rate() {
        for arch in SupervisedArch::ALL {
            let net = SupervisedNet::build(arch, &mut stream_from_seed(3));
            let mut g = Graph::inference();
            let x = g.constant(&[2, 100], (0..200).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
            let mut rng = stream_from_seed(0);
            let a = net.forward(&mut g, x, NoiseMode::Suspended, &mut rng).unwrap();
            let b = net.forward(&mut g, x, NoiseMode::Suspended, &mut rng).unwrap();
            assert_eq!(g.shape(a.logits), &[2, 5]);
            assert_eq!(g.value(a.logits), g.value(b.logits));
        }
        let d = DropoutLayer::new("d", 0.2, 256);
        let mut g = Graph::inference();
        let x = g.constant(&[200, 256], vec![1.0; 200 * 256]).unwrap();
        let y = d.forward(&mut g, x, NoiseMode::Stochastic, &mut stream_from_seed(8)).unwrap();
        let frac = g.value(y).iter().filter(|&&v| v == 0.0).count() as f64 / (200.0 * 256.0);
        assert!((frac - 0.2).abs() < 0.01);
    }
}
