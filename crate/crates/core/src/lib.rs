//! Noise-injecting regularizers for actor-critic agents.
//!
//! The crate bundles a small reverse-mode differentiation core, the policy
//! and latent distributions, networks with a noise-suspension switch, a
//! procedurally generated multi-room gridworld, PPO training with selective
//! noise injection and the information-bottleneck actor-critic, a supervised
//! feature-generality benchmark, and the experiment harness behind the
//! `regrl` binary.

pub mod diffcore;
pub mod gridworld;
pub mod harness;
pub mod distributions;
pub mod netblocks;
pub mod oracle;
pub mod rltrain;
pub mod rng;
pub mod supervised;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/gridworld.md")]
    mod gridworld {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/supervised.md")]
    mod supervised {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
