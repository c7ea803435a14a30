//! Seed discipline.
//!
//! A root seed expands into independent named substreams. Each substream is a
//! ChaCha8 generator whose key is derived from `(root, name)` and whose stream
//! id is a caller-chosen counter, so drawing from one noise source never shifts
//! another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic random stream used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Well-known substream names.
pub mod streams {
    pub const ENV_GEN: &str = "env-gen";
    pub const EVAL_GEN: &str = "eval-gen";
    pub const ACTION_SAMPLING: &str = "action-sampling";
    pub const INIT: &str = "init";
    pub const DROPOUT_MASK: &str = "dropout-mask";
    pub const DROPOUT_NOISE: &str = "dropout-noise";
    pub const LATENT_NOISE: &str = "latent-noise";
    pub const MINIBATCH: &str = "minibatch";
    pub const DATA: &str = "data";
    pub const EVAL_ACTIONS: &str = "eval-actions";
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Root of a seed tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Stream `index` of the substream `name`.
    pub fn stream(&self, name: &str, index: u64) -> Stream {
        let key = splitmix64(self.root ^ splitmix64(fnv1a(name)));
        let mut seed = [0u8; 32];
        let mut k = key;
        for chunk in seed.chunks_mut(8) {
            k = splitmix64(k);
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }

    /// A derived 64-bit seed, for APIs that take a plain seed.
    pub fn seed(&self, name: &str, index: u64) -> u64 {
        self.stream(name, index).next_u64()
    }

    /// Child tree, e.g. one per sweep cell.
    pub fn child(&self, name: &str, index: u64) -> SeedTree {
        SeedTree::new(self.seed(name, index))
    }
}

/// Generator seeded directly from a 64-bit value.
pub fn stream_from_seed(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in the open interval (0, 1).
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal variates via the Box–Muller transform.
#[derive(Debug, Clone, Default)]
pub struct BoxMuller {
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn new() -> Self {
        Self { spare: None }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let u1 = uniform_open(rng);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        for v in out {
            *v = self.sample(rng);
        }
    }
}

/// `n` standard normal draws.
pub fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut bm = BoxMuller::new();
    let mut out = vec![0.0; n];
    bm.fill(rng, &mut out);
    out
}
