//! The invariant and oracle suite behind `regrl verify`.

use std::time::Instant;

use super::checks::*;
use crate::netblocks::{MultiroomArch, SupervisedArch};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> (bool, String);

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const GRAD_TOL: f64 = 1e-4;

fn worst<T>(items: impl IntoIterator<Item = (T, f64)>) -> (T, f64)
where
    T: Default,
{
    items.into_iter().fold((T::default(), f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc })
}

fn check_oracle_equivalence() -> (bool, String) {
    let w = SEEDS.iter().map(|&s| oracle_equivalence(s).worst()).fold(0.0, f64::max);
    (w <= 1e-10, format!("worst relative error {w:.2e} (≤ 1e-10)"))
}

fn check_sni_structure() -> (bool, String) {
    let mut ok = true;
    let mut lin = 0.0f64;
    for arch in [MultiroomArch::Ibac, MultiroomArch::Dropout] {
        for s in 0..3 {
            let r = sni_structure(arch, s);
            ok &= r.det_endpoint_bitwise && r.endpoint_gap > 1e-8;
            lin = lin.max(r.linearity_rel);
        }
    }
    (ok && lin <= 1e-12, format!("λ=1 endpoint bitwise: {ok}; linearity {lin:.2e} (≤ 1e-12)"))
}

fn check_op_gradients() -> (bool, String) {
    let (name, w) = worst(SEEDS.iter().flat_map(|&s| op_gradient_errors(s)));
    (w <= GRAD_TOL, format!("worst op {name}: {w:.2e} over 5 seeds (≤ 1e-4)"))
}

fn check_arch_gradients() -> (bool, String) {
    let mut all = Vec::new();
    for &s in &SEEDS {
        for arch in [MultiroomArch::Baseline, MultiroomArch::Dropout, MultiroomArch::Ibac] {
            all.push((arch.name(), multiroom_gradient_error(arch, s)));
        }
        for arch in SupervisedArch::ALL {
            all.push((arch.name(), supervised_gradient_error(arch, s)));
        }
    }
    let (name, w) = worst(all);
    (w <= GRAD_TOL, format!("worst network {name}: {w:.2e} over 5 seeds (≤ 1e-4)"))
}

fn check_backward_determinism() -> (bool, String) {
    let ok = backward_deterministic(7);
    (ok, "repeated backward passes are bitwise equal".into())
}

fn check_stop_gradient() -> (bool, String) {
    let ok = (0..5).all(stop_gradient_blocks);
    (ok, "∂(x·sg(x))/∂x = sg(x) exactly".into())
}

fn check_weight_decay() -> (bool, String) {
    let w = weight_decay_geometric(50);
    (w <= 1e-12, format!("norm deviation from (1 − αλ)^t: {w:.2e}"))
}

fn check_gaussian_kl() -> (bool, String) {
    let pairs = gaussian_kl_monte_carlo(20, 100_000, 3, 2024);
    let zd = pairs.iter().map(|p| p.0.z()).fold(0.0, f64::max);
    let zi = pairs.iter().map(|p| p.1.z()).fold(0.0, f64::max);
    (zd <= 3.0 && zi <= 3.0, format!("max |z|: direct {zd:.2}, entropy + cross term {zi:.2} (≤ 3)"))
}

fn check_graph_kl() -> (bool, String) {
    let gap = (0..5).map(graph_kl_matches_closed_form).fold(0.0, f64::max);
    let grad = (0..5).map(kl_mean_gradient_gap).fold(0.0, f64::max);
    (gap <= 1e-12 && grad == 0.0, format!("graph KL vs closed form {gap:.1e}; |∂KL/∂μ − μ| {grad:.1e}"))
}

fn check_sampling() -> (bool, String) {
    let peaked = categorical_frequencies(&[100.0, 0.0, 0.0], 10_000, 1)[0];
    let uniform = categorical_frequencies(&[0.0; 4], 10_000, 2).iter().map(|f| (f - 0.25).abs()).fold(0.0, f64::max);
    let m = reparam_sample_mean(100_000, 3);
    let ok = peaked > 0.999 && uniform <= 0.02 && m.abs() <= 0.01;
    (ok, format!("peaked {peaked:.4}; uniform max dev {uniform:.4}; N(0,1) mean {m:.4}"))
}

fn check_dropout() -> (bool, String) {
    let (f, scaled) = dropout_zero_fraction(0.2, 100_000, 5);
    ((f - 0.2).abs() <= 0.005 && scaled, format!("zero fraction {f:.4}; survivors ×1.25: {scaled}"))
}

fn check_suspended_pure() -> (bool, String) {
    (suspended_forward_pure(3), "suspended outputs independent of the noise stream".into())
}

fn check_levels() -> (bool, String) {
    let r = level_generator_survey(10_000);
    let dev = r.room_frequencies.iter().map(|f| (f - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    (r.unsolvable.is_empty() && dev <= 0.02, format!("{} unsolvable of {}; room frequencies {:.4?}", r.unsolvable.len(), r.levels, r.room_frequencies))
}

fn check_gridworld_dynamics() -> (bool, String) {
    let r = random_episode_returns(500, 11).and(reversibility(500, 12));
    let e = encoding_injective(42);
    match (r, e) {
        (Ok(()), Ok(n)) => (true, format!("return bounds, reversibility, injective encoding over {n} states")),
        (Err(m), _) | (_, Err(m)) => (false, m),
    }
}

fn check_rollouts() -> (bool, String) {
    let ok = [MultiroomArch::Baseline, MultiroomArch::Dropout, MultiroomArch::Ibac].into_iter().all(|a| rollout_reproducible(a, 9));
    (ok, "rollouts repeat and stored statistics recompute exactly".into())
}

fn check_vanishing_std() -> (bool, String) {
    let e = ibac_vanishing_std_gap(13);
    (e <= 1e-4, format!("gradient gap at std 1e-6: {e:.2e} (≤ 1e-4)"))
}

fn check_stoch_kl() -> (bool, String) {
    let (m, se) = stochastic_kl_proxy(5, 50);
    (m > 3.0 * se, format!("mean {m:.3e}, 3·SE {:.3e}", 3.0 * se))
}

fn check_untrained_policy() -> (bool, String) {
    let (p, q, se) = untrained_vs_uniform(2, 1000);
    ((p - q).abs() <= 3.0 * se, format!("policy {p:.3} vs uniform {q:.3} (3·SE {:.3})", 3.0 * se))
}

fn check_dataset() -> (bool, String) {
    let counts = class_histogram(10_000, 11);
    let dev = counts.iter().map(|&c| (c as i64 - 2000).unsigned_abs()).max().unwrap_or(0);
    match dataset_invariants(3) {
        Ok(()) => (dev <= 130, format!("class counts {counts:?}; g side shared, f redrawn, generation pure")),
        Err(m) => (false, m),
    }
}

const SUITE: &[(&str, CheckFn)] = &[
    ("diffcore: op gradients", check_op_gradients),
    ("diffcore: backward determinism", check_backward_determinism),
    ("diffcore: stop_gradient", check_stop_gradient),
    ("diffcore: decoupled weight decay", check_weight_decay),
    ("distributions: gaussian KL Monte Carlo", check_gaussian_kl),
    ("distributions: graph KL", check_graph_kl),
    ("distributions: sampling", check_sampling),
    ("netblocks: network gradients", check_arch_gradients),
    ("netblocks: dropout frequency", check_dropout),
    ("netblocks: suspended purity", check_suspended_pure),
    ("gridworld: generator survey", check_levels),
    ("gridworld: dynamics", check_gridworld_dynamics),
    ("rltrain: oracle equivalence", check_oracle_equivalence),
    ("rltrain: SNI structure", check_sni_structure),
    ("rltrain: rollouts", check_rollouts),
    ("rltrain: vanishing posterior std", check_vanishing_std),
    ("rltrain: noisy KL proxy", check_stoch_kl),
    ("rltrain: untrained policy", check_untrained_policy),
    ("supervised: data", check_dataset),
];

pub fn check_names() -> Vec<&'static str> {
    SUITE.iter().map(|c| c.0).collect()
}

/// Runs every check, reporting each as it finishes.
pub fn run_suite(mut report: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    SUITE
        .iter()
        .map(|&(name, f)| {
            let t = Instant::now();
            let (passed, detail) = f();
            let o = CheckOutcome { name, passed, detail, seconds: t.elapsed().as_secs_f64() };
            report(&o);
            o
        })
        .collect()
}
