//! Low-data feature-generality benchmark.
//!
//! Each input encodes its class twice: a noisy full-length pattern `f` drawn
//! from `omega_f` patterns per class, and a short noise-free pattern `g`
//! pasted at one of `n_g` fixed locations. The `g` side is shared between
//! train and test banks while test `f` patterns are drawn afresh, so only
//! features that pick up `g` transfer.

mod sweep;
mod train;

pub use sweep::{mean_stderr, run_sweep, write_sweep_csv, SweepAxis, SweepCell, SweepConfig, SweepRow, SweepTable};
pub use train::{evaluate, train_classifier, training_loss, LossCurves, TrainHp};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_from_seed, BoxMuller};

#[derive(Debug, thiserror::Error)]
pub enum SupError {
    #[error(transparent)]
    Net(#[from] crate::netblocks::NetError),
    #[error("invalid data configuration: {0}")]
    Config(String),
    #[error("bank is for the {bank:?} split but {requested:?} was requested")]
    SplitMismatch { bank: Split, requested: Split },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "dd::d_x")]
    pub d_x: usize,
    #[serde(default = "dd::d_g")]
    pub d_g: usize,
    #[serde(default = "dd::n_g")]
    pub n_g: usize,
    #[serde(default = "dd::n_c")]
    pub n_classes: usize,
    #[serde(default = "dd::one")]
    pub omega_f: usize,
    #[serde(default = "dd::one")]
    pub omega_g: usize,
    #[serde(default = "dd::sigma")]
    pub sigma_eps: f64,
    /// Harmonics per random Fourier series.
    #[serde(default = "dd::order")]
    pub fourier_order: usize,
}

mod dd {
    pub fn d_x() -> usize {
        100
    }
    pub fn d_g() -> usize {
        20
    }
    pub fn n_g() -> usize {
        3
    }
    pub fn n_c() -> usize {
        5
    }
    pub fn one() -> usize {
        1
    }
    pub fn sigma() -> f64 {
        1.0
    }
    pub fn order() -> usize {
        8
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { d_x: 100, d_g: 20, n_g: 3, n_classes: 5, omega_f: 1, omega_g: 1, sigma_eps: 1.0, fourier_order: 8 }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<(), SupError> {
        let bad = |m: String| Err(SupError::Config(m));
        if self.d_g == 0 || self.d_g >= self.d_x {
            return bad(format!("need 0 < d_g < d_x, got d_g={} d_x={}", self.d_g, self.d_x));
        }
        let positions = self.d_x - self.d_g + 1;
        if self.n_g == 0 || self.n_g > positions {
            return bad(format!("n_g={} must lie in 1..={positions}", self.n_g));
        }
        if self.n_classes < 2 || self.omega_f == 0 || self.omega_g == 0 || self.fourier_order == 0 {
            return bad("n_classes ≥ 2 and omega_f, omega_g, fourier_order ≥ 1 required".into());
        }
        if !(self.sigma_eps >= 0.0) {
            return bad(format!("sigma_eps must be non-negative, got {}", self.sigma_eps));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternBank {
    pub config: DataConfig,
    /// `[class][j]`, each of length `d_x`.
    pub f_patterns: Vec<Vec<Vec<f64>>>,
    /// `[class][j]`, each of length `d_g`.
    pub g_patterns: Vec<Vec<Vec<f64>>>,
    pub g_locations: Vec<usize>,
    pub fourier_order: usize,
    pub seed: u64,
    pub split: Split,
}

/// A random Fourier series `Σ_k a_k sin(2πkt) + b_k cos(2πkt)` with
/// coefficients in `[0, 1]`, evaluated at `d` sorted uniform points.
fn fourier_pattern<R: Rng>(rng: &mut R, order: usize, d: usize) -> Vec<f64> {
    let coef: Vec<(f64, f64)> = (0..order).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    let mut t: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    t.sort_by(f64::total_cmp);
    t.iter()
        .map(|&t| {
            coef.iter()
                .enumerate()
                .map(|(k, &(a, b))| {
                    let w = 2.0 * std::f64::consts::PI * (k + 1) as f64 * t;
                    a * w.sin() + b * w.cos()
                })
                .sum()
        })
        .collect()
}

fn draw_patterns<R: Rng>(rng: &mut R, cfg: &DataConfig, omega: usize, d: usize) -> Vec<Vec<Vec<f64>>> {
    (0..cfg.n_classes).map(|_| (0..omega).map(|_| fourier_pattern(rng, cfg.fourier_order, d)).collect()).collect()
}

/// The training-split bank.
pub fn make_pattern_bank(cfg: &DataConfig, seed: u64) -> Result<PatternBank, SupError> {
    cfg.validate()?;
    let mut rng = stream_from_seed(seed);
    let g_patterns = draw_patterns(&mut rng, cfg, cfg.omega_g, cfg.d_g);
    let mut g_locations = sample(&mut rng, cfg.d_x - cfg.d_g + 1, cfg.n_g).into_vec();
    g_locations.sort_unstable();
    let f_patterns = draw_patterns(&mut rng, cfg, cfg.omega_f, cfg.d_x);
    Ok(PatternBank { config: *cfg, f_patterns, g_patterns, g_locations, fourier_order: cfg.fourier_order, seed, split: Split::Train })
}

/// A test-split bank: fresh `f` patterns, `g` patterns and locations copied.
pub fn redraw_test_bank(train: &PatternBank, seed: u64) -> PatternBank {
    let mut rng = stream_from_seed(seed);
    let cfg = train.config;
    PatternBank { f_patterns: draw_patterns(&mut rng, &cfg, cfg.omega_f, cfg.d_x), seed, split: Split::Test, ..train.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowProvenance {
    pub f_index: usize,
    pub g_index: usize,
    pub g_location: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub d_x: usize,
    pub n_classes: usize,
    /// Row-major `[N, d_x]`.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub provenance: Vec<RowProvenance>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d_x..(i + 1) * self.d_x]
    }
}

pub fn generate_dataset(bank: &PatternBank, n: usize, sigma_eps: f64, seed: u64, split: Split) -> Result<SynthDataset, SupError> {
    if bank.split != split {
        return Err(SupError::SplitMismatch { bank: bank.split, requested: split });
    }
    let cfg = &bank.config;
    let mut rng = stream_from_seed(seed);
    let mut normal = BoxMuller::new();
    let mut inputs = Vec::with_capacity(n * cfg.d_x);
    let mut labels = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.gen_range(0..cfg.n_classes);
        let j = rng.gen_range(0..cfg.omega_f);
        let start = inputs.len();
        for &v in &bank.f_patterns[c][j] {
            inputs.push(v + sigma_eps * normal.sample(&mut rng));
        }
        let gi = rng.gen_range(0..cfg.omega_g);
        let loc = bank.g_locations[rng.gen_range(0..bank.g_locations.len())];
        inputs[start + loc..start + loc + cfg.d_g].copy_from_slice(&bank.g_patterns[c][gi]);
        labels.push(c);
        provenance.push(RowProvenance { f_index: j, g_index: gi, g_location: loc });
    }
    Ok(SynthDataset { d_x: cfg.d_x, n_classes: cfg.n_classes, inputs, labels, provenance })
}
