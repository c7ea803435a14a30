//! Numerical checks shared by `verify`, the acceptance binary and the tests.
//!
//! Each function returns the measured quantity; thresholds live with the
//! caller.

use std::collections::BTreeMap;

use rand::Rng;

use crate::diffcore::{AdamConfig, AdamState, DiffError, Graph, Var};
use crate::distributions::{gaussian, CategoricalParams, DiagGaussianParams};
use crate::gridworld::{generate_level, CellKind, VecEnv, GRID};
use crate::netblocks::{MultiroomArch, MultiroomNet, NoiseMode, SupervisedArch, SupervisedNet, SupervisedShape};
use crate::oracle::ppo::{reference_ppo_step, RefBatch, RefHyper};
use crate::oracle::{bfs_distance, finite_difference_gradient, relative_error};
use crate::rltrain::{collect_rollout, compute_gae, sni_gradient, sni_update, RolloutBatch, SniConfig};
use crate::rng::{stream_from_seed, BoxMuller, SeedTree};
use crate::supervised::{generate_dataset, make_pattern_bank, training_loss, DataConfig, Split};

pub const FD_STEP: f64 = 1e-5;

pub fn multiroom_net(arch: MultiroomArch, seed: u64) -> MultiroomNet {
    let mut n = MultiroomNet::build(arch, &mut stream_from_seed(seed));
    n.freeze_dropout_mask(seed ^ 0xD00D);
    n
}

/// A short rollout with rewards, dones and rollout statistics perturbed so
/// that clipping and done-masking are exercised.
pub fn perturbed_batch(net: &MultiroomNet, n_envs: usize, n_steps: usize, seed: u64) -> RolloutBatch {
    let tree = SeedTree::new(seed);
    let mut envs = VecEnv::new(n_envs, &tree, "env-gen", None).expect("valid env count");
    let (mut b, _) = collect_rollout(net, &mut envs, n_steps, &mut tree.stream("action-sampling", 0)).expect("rollout");
    let mut r = stream_from_seed(seed.wrapping_add(99));
    for i in 0..b.len() {
        b.rewards[i] = if r.gen::<f64>() < 0.3 { r.gen_range(0.1..1.0) } else { 0.0 };
        b.dones[i] = r.gen::<f64>() < 0.15;
        b.rollout_log_probs[i] += r.gen_range(-0.4..0.4);
        b.rollout_values[i] += r.gen_range(-0.5..0.5);
    }
    b
}

fn plain_cfg(arch: MultiroomArch, lambda: f64) -> SniConfig {
    SniConfig { lambda, normalize_advantages: false, epochs: 1, minibatches: 1, ..SniConfig::for_arch(arch) }
}

#[derive(Clone, Copy, Debug)]
pub struct EquivalenceReport {
    pub loss_rel: f64,
    pub grad_rel: f64,
    pub step_rel: f64,
}

impl EquivalenceReport {
    pub fn worst(&self) -> f64 {
        self.loss_rel.max(self.grad_rel).max(self.step_rel)
    }
}

/// One baseline update against the straight-line reference on a 2 × 8 batch.
pub fn oracle_equivalence(seed: u64) -> EquivalenceReport {
    let base = multiroom_net(MultiroomArch::Baseline, seed);
    let batch = perturbed_batch(&base, 2, 8, seed);
    let cfg = SniConfig { beta: 0.0, ..plain_cfg(MultiroomArch::Baseline, 1.0) };
    let adam = AdamConfig::new(7e-4).with_clip_norm(0.5);
    let hp = RefHyper {
        gamma: 0.99,
        lambda_gae: 0.95,
        clip_eps: cfg.clip_eps,
        lambda_v: cfg.lambda_v,
        lambda_h: cfg.lambda_h,
        learning_rate: adam.learning_rate,
        beta1: adam.beta1,
        beta2: adam.beta2,
        epsilon: adam.epsilon,
        clip_norm: 0.5,
    };
    let rb = RefBatch {
        n_steps: batch.n_steps,
        n_envs: batch.n_envs,
        observations: batch.observations.clone(),
        actions: batch.actions.clone(),
        rewards: batch.rewards.clone(),
        dones: batch.dones.clone(),
        old_log_probs: batch.rollout_log_probs.clone(),
        old_values: batch.rollout_values.clone(),
        bootstrap: batch.bootstrap_values.clone(),
    };
    let params: BTreeMap<String, Vec<f64>> = base.store.iter().map(|p| (p.name().to_string(), p.value().to_vec())).collect();
    let reference = reference_ppo_step(&params, &rb, &hp);

    let adv = compute_gae(&batch, 0.99, 0.95);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut g_net = base.clone();
    let rep = sni_gradient(&mut g_net, &batch, &adv.advantages, &adv.value_targets, &idx, &cfg, &mut stream_from_seed(0)).expect("gradient");
    let loss_rel = (rep.total_loss - reference.loss).abs() / reference.loss.abs().max(1e-8);
    let ours: Vec<f64> = g_net.store.iter().flat_map(|p| p.grad().to_vec()).collect();
    let theirs: Vec<f64> = g_net.store.iter().flat_map(|p| reference.grads[p.name()].clone()).collect();

    let mut u_net = base.clone();
    let mut opt = AdamState::new(adam, &u_net.store);
    sni_update(&mut u_net, &mut opt, &batch, &adv, &cfg, &mut stream_from_seed(1), &mut stream_from_seed(2)).expect("update");
    let before = base.store.flat_values();
    let d_ours: Vec<f64> = u_net.store.flat_values().iter().zip(&before).map(|(a, b)| a - b).collect();
    let d_ref: Vec<f64> = u_net.store.iter().flat_map(|p| reference.new_params[p.name()].clone()).zip(&before).map(|(a, b)| a - b).collect();
    EquivalenceReport { loss_rel, grad_rel: relative_error(&ours, &theirs), step_rel: relative_error(&d_ours, &d_ref) }
}

#[derive(Clone, Copy, Debug)]
pub struct SniReport {
    /// λ=1 gradient equals the suspended-only objective's gradient bit for bit.
    pub det_endpoint_bitwise: bool,
    /// ‖g(½) − (g(1) + g(0))/2‖ relative.
    pub linearity_rel: f64,
    /// ‖g(1) − g(0)‖ relative; the noise has to matter for the test to mean anything.
    pub endpoint_gap: f64,
}

/// Gradients at λ ∈ {0, ½, 1} sharing one noise draw.
pub fn sni_structure(arch: MultiroomArch, seed: u64) -> SniReport {
    let n0 = multiroom_net(arch, seed);
    let batch = perturbed_batch(&n0, 2, 8, seed);
    let adv = compute_gae(&batch, 0.99, 0.95);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let grad = |lambda: f64| {
        let mut n = n0.clone();
        sni_gradient(&mut n, &batch, &adv.advantages, &adv.value_targets, &idx, &plain_cfg(arch, lambda), &mut stream_from_seed(seed)).expect("gradient");
        n.store.flat_grad()
    };
    let (g1, g0, gh) = (grad(1.0), grad(0.0), grad(0.5));
    let det = suspended_objective_gradient(&n0, &batch, &adv.advantages, &adv.value_targets, &plain_cfg(arch, 1.0));
    let mean: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| 0.5 * (a + b)).collect();
    SniReport { det_endpoint_bitwise: g1 == det, linearity_rel: relative_error(&gh, &mean), endpoint_gap: relative_error(&g1, &g0) }
}

/// The noise-suspended actor-critic objective assembled by hand.
pub fn suspended_objective_gradient(n0: &MultiroomNet, batch: &RolloutBatch, adv: &[f64], targets: &[f64], cfg: &SniConfig) -> Vec<f64> {
    use crate::rltrain::{ppo_policy_loss, ppo_value_loss};
    let mut n = n0.clone();
    n.store.zero_grad();
    let mut g = Graph::new();
    let obs = g.constant(&[batch.len(), GRID, GRID, 3], batch.observations.clone()).expect("obs shape");
    let out = n.forward(&mut g, obs, NoiseMode::Suspended, &mut stream_from_seed(0)).expect("forward");
    let lp = out.action_params.log_prob(&mut g, &batch.actions).expect("actions");
    let pl = ppo_policy_loss(&mut g, lp, &batch.rollout_log_probs, adv, cfg.clip_eps).expect("policy loss");
    let vl = ppo_value_loss(&mut g, out.value, &batch.rollout_values, targets, cfg.clip_eps, false).expect("value loss");
    let wv = g.scale(vl, cfg.lambda_v);
    let mut total = g.add(pl, wv).expect("scalar");
    if let (Some(l), true) = (out.latent, cfg.beta != 0.0) {
        let k = l.kl_to_standard(&mut g).expect("kl");
        let k = g.mean(k);
        let wk = g.scale(k, cfg.beta);
        total = g.add(total, wk).expect("scalar");
    }
    let h = out.action_params.entropy(&mut g).expect("entropy");
    let h = g.mean(h);
    let wh = g.scale(h, cfg.lambda_h);
    let total = g.sub(total, wh).expect("scalar");
    g.backward(total).expect("backward");
    g.accumulate_param_grads(&mut n.store);
    n.store.flat_grad()
}

type OpBuilder = fn(&mut Graph, &[Var]) -> Result<Var, DiffError>;

struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    positive: bool,
    build: OpBuilder,
}

const OP_CASES: &[OpCase] = &[
    OpCase { name: "add", shapes: &[&[3, 4], &[3, 4]], positive: false, build: |g, v| g.add(v[0], v[1]) },
    OpCase { name: "add (broadcast)", shapes: &[&[2, 3, 4], &[4]], positive: false, build: |g, v| g.add(v[0], v[1]) },
    OpCase { name: "sub (broadcast)", shapes: &[&[3, 4], &[4]], positive: false, build: |g, v| g.sub(v[0], v[1]) },
    OpCase { name: "mul (broadcast)", shapes: &[&[2, 3, 4], &[3, 4]], positive: false, build: |g, v| g.mul(v[0], v[1]) },
    OpCase { name: "matmul", shapes: &[&[3, 4], &[4, 5]], positive: false, build: |g, v| g.matmul(v[0], v[1]) },
    OpCase { name: "conv2d_valid", shapes: &[&[2, 5, 6, 3], &[3, 2, 3, 4]], positive: false, build: |g, v| g.conv2d_valid(v[0], v[1]) },
    OpCase { name: "conv1d_valid", shapes: &[&[2, 12, 2], &[4, 2, 3]], positive: false, build: |g, v| g.conv1d_valid(v[0], v[1]) },
    OpCase { name: "relu", shapes: &[&[4, 5]], positive: false, build: |g, v| Ok(g.relu(v[0])) },
    OpCase { name: "exp", shapes: &[&[4, 5]], positive: false, build: |g, v| Ok(g.exp(v[0])) },
    OpCase { name: "log", shapes: &[&[4, 5]], positive: true, build: |g, v| Ok(g.log(v[0])) },
    OpCase { name: "square", shapes: &[&[4, 5]], positive: false, build: |g, v| Ok(g.square(v[0])) },
    OpCase { name: "scale", shapes: &[&[4, 5]], positive: false, build: |g, v| Ok(g.scale(v[0], -1.7)) },
    OpCase { name: "neg", shapes: &[&[4, 5]], positive: false, build: |g, v| Ok(g.neg(v[0])) },
    OpCase { name: "clip_value", shapes: &[&[4, 5]], positive: false, build: |g, v| Ok(g.clip_value(v[0], -0.45, 0.55)) },
    OpCase { name: "reshape", shapes: &[&[3, 4]], positive: false, build: |g, v| g.reshape(v[0], &[2, 6]) },
    OpCase { name: "flatten", shapes: &[&[2, 3, 4]], positive: false, build: |g, v| g.flatten(v[0]) },
    OpCase { name: "log_softmax", shapes: &[&[3, 5]], positive: false, build: |g, v| g.log_softmax(v[0]) },
    OpCase { name: "gather_index", shapes: &[&[3, 5]], positive: false, build: |g, v| g.gather_index(v[0], &[0, 4, 2]) },
    OpCase { name: "sum", shapes: &[&[3, 5]], positive: false, build: |g, v| Ok(g.sum(v[0])) },
    OpCase { name: "mean", shapes: &[&[3, 5]], positive: false, build: |g, v| Ok(g.mean(v[0])) },
    OpCase { name: "sum_last", shapes: &[&[3, 5]], positive: false, build: |g, v| g.sum_last(v[0]) },
    OpCase { name: "min_elem", shapes: &[&[3, 5], &[3, 5]], positive: false, build: |g, v| g.min_elem(v[0], v[1]) },
    OpCase { name: "max_elem", shapes: &[&[3, 5], &[3, 5]], positive: false, build: |g, v| g.max_elem(v[0], v[1]) },
    OpCase { name: "categorical entropy", shapes: &[&[3, 4]], positive: false, build: |g, v| {
        let c = CategoricalParams::from_logits(g, v[0])?;
        c.entropy(g)
    } },
    OpCase { name: "categorical log_prob", shapes: &[&[3, 4]], positive: false, build: |g, v| {
        let c = CategoricalParams::from_logits(g, v[0])?;
        c.log_prob(g, &[1, 3, 0])
    } },
    OpCase { name: "gaussian kl_to_standard", shapes: &[&[3, 4], &[3, 4]], positive: false, build: |g, v| {
        DiagGaussianParams::new(g, v[0], v[1])?.kl_to_standard(g)
    } },
    OpCase { name: "gaussian reparam_sample", shapes: &[&[3, 4], &[3, 4]], positive: false, build: |g, v| {
        DiagGaussianParams::new(g, v[0], v[1])?.reparam_sample(g, &mut stream_from_seed(5))
    } },
];

/// Builds `Σ w ⊙ op(inputs)` with a fixed random `w` and differentiates it
/// with respect to every input.
fn op_gradient_error(case: &OpCase, seed: u64) -> f64 {
    let mut rng = stream_from_seed(seed);
    let inputs: Vec<Vec<f64>> = case
        .shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            (0..n).map(|_| if case.positive { rng.gen_range(0.2..2.0) } else { rng.gen_range(-1.0..1.0) }).collect()
        })
        .collect();
    let weight_seed = rng.gen::<u64>();
    let eval = |vals: &[Vec<f64>], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = case.shapes.iter().zip(vals).map(|(s, v)| g.variable(s, v.clone()).expect("shape")).collect();
        let out = (case.build)(&mut g, &vars).expect("op");
        let n = g.value(out).len();
        let mut wr = stream_from_seed(weight_seed);
        let w: Vec<f64> = (0..n).map(|_| wr.gen_range(0.5..1.5)).collect();
        let shape = g.shape(out).to_vec();
        let w = g.constant(&shape, w).expect("shape");
        let prod = g.mul(out, w).expect("same shape");
        let root = g.sum(prod);
        let value = g.scalar(root);
        if !grads {
            return (value, Vec::new());
        }
        g.backward(root).expect("scalar root");
        (value, vars.iter().map(|&v| g.grad(v)).collect())
    };
    let (_, analytic) = eval(&inputs, true);
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let mut f = |xk: &[f64]| {
            let mut vals = inputs.clone();
            vals[k] = xk.to_vec();
            eval(&vals, false).0
        };
        let numeric = finite_difference_gradient(&mut f, x, FD_STEP);
        worst = worst.max(relative_error(&analytic[k], &numeric));
    }
    worst
}

pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    OP_CASES.iter().map(|c| (c.name, op_gradient_error(c, seed))).collect()
}

/// `(loss, graph, root)`; the graph and root only when asked to record.
type LossFn<'a, N> = &'a dyn Fn(&N, bool) -> (f64, Option<Graph>, Option<Var>);

/// Finite differences on `coords_per_tensor` random coordinates of every
/// parameter tensor.
fn spot_check<N>(net: &mut N, store: fn(&mut N) -> &mut crate::diffcore::ParamStore, loss: LossFn<'_, N>, coords_per_tensor: usize, seed: u64) -> f64 {
    let (_, g, root) = loss(net, true);
    let (mut g, root) = (g.expect("graph"), root.expect("root"));
    store(net).zero_grad();
    g.backward(root).expect("backward");
    g.accumulate_param_grads(store(net));
    let mut pick = stream_from_seed(seed);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let names: Vec<String> = store(net).iter().map(|p| p.name().to_string()).collect();
    for name in names {
        let id = store(net).find(&name).expect("listed name");
        let n = store(net).get(id).value().len();
        for _ in 0..coords_per_tensor {
            let k = pick.gen_range(0..n);
            let orig = store(net).get(id).value()[k];
            store(net).get_mut(id).value_mut()[k] = orig + FD_STEP;
            let up = loss(net, false).0;
            store(net).get_mut(id).value_mut()[k] = orig - FD_STEP;
            let down = loss(net, false).0;
            store(net).get_mut(id).value_mut()[k] = orig;
            analytic.push(store(net).get(id).grad()[k]);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Full multiroom network in suspended mode: `Σ w₁·log π + Σ w₂·V`.
pub fn multiroom_gradient_error(arch: MultiroomArch, seed: u64) -> f64 {
    let mut net = multiroom_net(arch, seed);
    let mut rng = stream_from_seed(seed ^ 0xABC);
    let obs: Vec<f64> = (0..2 * GRID * GRID * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    let w1: Vec<f64> = (0..2 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w2: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |net: &MultiroomNet, grads: bool| {
        let mut g = if grads { Graph::new() } else { Graph::inference() };
        let x = g.constant(&[2, GRID, GRID, 3], obs.clone()).expect("obs");
        let out = net.forward(&mut g, x, NoiseMode::Suspended, &mut stream_from_seed(0)).expect("forward");
        let lp = out.action_params.log_probs();
        let a = g.constant(&[2, 4], w1.clone()).expect("w1");
        let b = g.constant(&[2], w2.clone()).expect("w2");
        let t1 = g.mul(lp, a).expect("shape");
        let t1 = g.sum(t1);
        let t2 = g.mul(out.value, b).expect("shape");
        let t2 = g.sum(t2);
        let root = g.add(t1, t2).expect("scalar");
        (g.scalar(root), grads.then_some(g), Some(root))
    };
    spot_check(&mut net, |n| &mut n.store, &loss, 6, seed)
}

/// Supervised training loss (noisy pass with a replayed noise stream).
pub fn supervised_gradient_error(arch: SupervisedArch, seed: u64) -> f64 {
    let shape = SupervisedShape { hidden1: 64, hidden2: 32, ..SupervisedShape::default() };
    let mut net = SupervisedNet::build_with_shape(arch, shape, &mut stream_from_seed(seed));
    let bank = make_pattern_bank(&DataConfig::default(), seed).expect("default config");
    let data = generate_dataset(&bank, 6, 1.0, seed + 1, Split::Train).expect("train split");
    let idx: Vec<usize> = (0..6).collect();
    let beta = if arch == SupervisedArch::Vib { 1e-3 } else { 0.0 };
    let loss = |net: &SupervisedNet, grads: bool| {
        let mut g = if grads { Graph::new() } else { Graph::inference() };
        let root = training_loss(&mut g, net, &data, &idx, beta, &mut stream_from_seed(seed ^ 77)).expect("loss");
        (g.scalar(root), grads.then_some(g), Some(root))
    };
    spot_check(&mut net, |n| &mut n.store, &loss, 6, seed)
}

#[derive(Clone, Copy, Debug)]
pub struct McComparison {
    pub closed_form: f64,
    pub estimate: f64,
    pub stderr: f64,
}

impl McComparison {
    pub fn z(&self) -> f64 {
        (self.estimate - self.closed_form).abs() / self.stderr.max(1e-300)
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn random_gaussian<R: Rng>(rng: &mut R, d: usize) -> (Vec<f64>, Vec<f64>) {
    ((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(), (0..d).map(|_| rng.gen_range(-0.7..0.5)).collect())
}

/// For each draw: closed-form `KL[p‖q]` against the Monte-Carlo mean of
/// `log p(x) − log q(x)`, and `−H[p] − E_p[log q]` against the closed form.
pub fn gaussian_kl_monte_carlo(draws: usize, samples: usize, dim: usize, seed: u64) -> Vec<(McComparison, McComparison)> {
    let mut rng = stream_from_seed(seed);
    let mut normal = BoxMuller::new();
    (0..draws)
        .map(|_| {
            let (mp, sp) = random_gaussian(&mut rng, dim);
            let (mq, sq) = random_gaussian(&mut rng, dim);
            let closed = gaussian::kl(&mp, &sp, &mq, &sq);
            let mut ratio = Vec::with_capacity(samples);
            let mut cross = Vec::with_capacity(samples);
            let mut x = vec![0.0; dim];
            for _ in 0..samples {
                for i in 0..dim {
                    x[i] = mp[i] + sp[i].exp() * normal.sample(&mut rng);
                }
                let lq = gaussian::log_density(&x, &mq, &sq);
                ratio.push(gaussian::log_density(&x, &mp, &sp) - lq);
                cross.push(lq);
            }
            let (rm, rse) = mean_se(&ratio);
            let (cm, cse) = mean_se(&cross);
            let direct = McComparison { closed_form: closed, estimate: rm, stderr: rse };
            let identity = McComparison { closed_form: closed, estimate: -gaussian::entropy(&sp) - cm, stderr: cse };
            (direct, identity)
        })
        .collect()
}

/// Largest gap between the graph's `kl_to_standard` and the closed form.
pub fn graph_kl_matches_closed_form(seed: u64) -> f64 {
    let mut rng = stream_from_seed(seed);
    let (m, s) = random_gaussian(&mut rng, 6);
    let mut g = Graph::inference();
    let mv = g.constant(&[2, 3], m.clone()).expect("shape");
    let sv = g.constant(&[2, 3], s.clone()).expect("shape");
    let kl = DiagGaussianParams::new(&mut g, mv, sv).expect("params").kl_to_standard(&mut g).expect("kl");
    (0..2).map(|r| (g.value(kl)[r] - gaussian::kl(&m[r * 3..r * 3 + 3], &s[r * 3..r * 3 + 3], &[0.0; 3], &[0.0; 3])).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct GeneratorReport {
    pub levels: usize,
    pub unsolvable: Vec<u64>,
    pub room_frequencies: [f64; 3],
}

pub fn level_generator_survey(n: u64) -> GeneratorReport {
    let mut counts = [0usize; 3];
    let mut unsolvable = Vec::new();
    for seed in 0..n {
        let l = generate_level(seed, None).expect("generator falls back on failure");
        counts[l.n_rooms as usize - 1] += 1;
        let passable: Vec<bool> = l.grid.iter().map(|c| c.kind != CellKind::Wall).collect();
        if bfs_distance(&passable, GRID, GRID, (l.agent_start.x, l.agent_start.y), l.goal_pos).is_none() {
            unsolvable.push(seed);
        }
    }
    GeneratorReport { levels: n as usize, unsolvable, room_frequencies: counts.map(|c| c as f64 / n as f64) }
}

fn set_param(n: &mut MultiroomNet, name: &str, value: impl Fn(usize) -> f64) {
    let id = n.store.find(name).expect("known parameter");
    for (i, v) in n.store.get_mut(id).value_mut().iter_mut().enumerate() {
        *v = value(i);
    }
}

/// IBAC at posterior std 1e-6: noisy-path gradient against the mean-path
/// gradient, relative.
pub fn ibac_vanishing_std_gap(seed: u64) -> f64 {
    let mut n0 = multiroom_net(MultiroomArch::Ibac, seed);
    set_param(&mut n0, "bottleneck.log_std.weight", |_| 0.0);
    set_param(&mut n0, "bottleneck.log_std.bias", |_| 1e-6f64.ln());
    let batch = perturbed_batch(&n0, 2, 8, seed);
    let adv = compute_gae(&batch, 0.99, 0.95);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let grad = |lambda: f64| {
        let mut n = n0.clone();
        let cfg = SniConfig { beta: 0.0, ..plain_cfg(MultiroomArch::Ibac, lambda) };
        sni_gradient(&mut n, &batch, &adv.advantages, &adv.value_targets, &idx, &cfg, &mut stream_from_seed(seed ^ 3)).expect("gradient");
        n.store.flat_grad()
    };
    relative_error(&grad(0.0), &grad(1.0))
}

/// Mean and standard error of the noisy-path KL proxy over `draws` noise
/// draws, for an IBAC net with unit posterior std and a sharpened policy head.
pub fn stochastic_kl_proxy(seed: u64, draws: usize) -> (f64, f64) {
    use crate::rltrain::{kl_proxy, KlPath};
    let mut n = multiroom_net(MultiroomArch::Ibac, seed);
    set_param(&mut n, "bottleneck.log_std.bias", |_| 0.0);
    let w = n.store.find("policy.weight").expect("policy head");
    n.store.get_mut(w).value_mut().iter_mut().for_each(|v| *v *= 100.0);
    let tree = SeedTree::new(seed);
    let mut envs = VecEnv::new(16, &tree, "env-gen", None).expect("envs");
    let (batch, _) = collect_rollout(&n, &mut envs, 16, &mut tree.stream("action-sampling", 0)).expect("rollout");
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut noise = stream_from_seed(seed ^ 8);
    let xs: Vec<f64> = (0..draws).map(|_| kl_proxy(&n, &batch, &idx, KlPath::Stoch, &mut noise).expect("proxy")).collect();
    mean_se(&xs)
}

/// Success of a freshly initialized policy and of a uniform-random policy
/// on the same one-room levels, with the standard error of their difference.
pub fn untrained_vs_uniform(seed: u64, episodes: usize) -> (f64, f64, f64) {
    use crate::oracle::uniform_random_success;
    use crate::rltrain::{evaluate_policy_with, EvalRooms};
    use rand::SeedableRng;
    let n = multiroom_net(MultiroomArch::Baseline, seed);
    let tree = SeedTree::new(seed ^ 77);
    let rep = evaluate_policy_with(&n, episodes, EvalRooms::Fixed(1), &tree).expect("evaluation");
    let levels: Vec<_> = (0..episodes as u64).map(|i| generate_level(tree.seed("eval-gen", i), Some(1)).expect("level")).collect();
    let p = uniform_random_success(&levels, &mut crate::rng::Stream::seed_from_u64(seed ^ 9));
    let se = (rep.success_se.powi(2) + p * (1.0 - p) / episodes as f64).sqrt();
    (rep.success_rate, p, se)
}

/// Two identically seeded rollouts agree, and recomputing the stored
/// log-probabilities and values from the stored observations is exact.
pub fn rollout_reproducible(arch: MultiroomArch, seed: u64) -> bool {
    let n = multiroom_net(arch, seed);
    let collect = || {
        let tree = SeedTree::new(seed);
        let mut envs = VecEnv::new(8, &tree, "env-gen", None).expect("envs");
        collect_rollout(&n, &mut envs, 32, &mut tree.stream("action-sampling", 0)).expect("rollout").0
    };
    let (a, b) = (collect(), collect());
    let mut g = Graph::inference();
    let obs = g.constant(&[a.len(), GRID, GRID, 3], a.observations.clone()).expect("obs");
    let out = n.forward(&mut g, obs, NoiseMode::Suspended, &mut stream_from_seed(0)).expect("forward");
    let lp = out.action_params.log_prob(&mut g, &a.actions).expect("actions");
    a == b && g.value(lp) == a.rollout_log_probs.as_slice() && g.value(out.value) == a.rollout_values.as_slice()
}

/// Zero fraction of stochastic dropout over `units` units, and whether all
/// survivors are scaled by exactly `1/(1−p)`.
pub fn dropout_zero_fraction(rate: f64, units: usize, seed: u64) -> (f64, bool) {
    use crate::netblocks::DropoutLayer;
    let d = DropoutLayer::new("d", rate, units);
    let mut g = Graph::inference();
    let x = g.constant(&[1, units], vec![1.0; units]).expect("shape");
    let y = d.forward(&mut g, x, NoiseMode::Stochastic, &mut stream_from_seed(seed)).expect("forward");
    let v = g.value(y);
    let zeros = v.iter().filter(|&&a| a == 0.0).count();
    let scale = 1.0 / (1.0 - rate);
    (zeros as f64 / units as f64, v.iter().all(|&a| a == 0.0 || a == scale))
}

/// Random-policy episodes; returns the first violated return bound.
pub fn random_episode_returns(episodes: usize, seed: u64) -> Result<(), String> {
    use crate::gridworld::{Action, GridState};
    let mut rng = stream_from_seed(seed);
    for e in 0..episodes {
        let level = generate_level(rng.gen(), None).expect("level");
        let mut s = GridState::new(level);
        let mut ret = 0.0;
        while !s.done {
            let t = s.step(Action::ALL[rng.gen_range(0..4)]).expect("live episode");
            ret += t.reward;
        }
        if !(ret == 0.0 || (ret > 0.1 && ret <= 1.0)) {
            return Err(format!("episode {e}: return {ret}"));
        }
    }
    Ok(())
}

/// Left-then-right restores the pose and toggle-twice restores doors, from
/// random reachable states.
pub fn reversibility(trials: usize, seed: u64) -> Result<(), String> {
    use crate::gridworld::{Action, GridState};
    let mut rng = stream_from_seed(seed);
    for t in 0..trials {
        let mut s = GridState::new(generate_level(rng.gen(), Some(3)).expect("level"));
        for _ in 0..rng.gen_range(0..12) {
            if s.step_count + 6 >= s.max_steps() || s.done {
                break;
            }
            s.step(Action::ALL[rng.gen_range(0..4)]).expect("live");
        }
        if s.done || s.step_count + 4 >= s.max_steps() {
            continue;
        }
        let (pose, doors) = (s.agent, s.doors_open.clone());
        s.step(Action::Left).expect("live");
        s.step(Action::Right).expect("live");
        if s.agent != pose {
            return Err(format!("trial {t}: left/right moved {pose:?} to {:?}", s.agent));
        }
        s.step(Action::Toggle).expect("live");
        s.step(Action::Toggle).expect("live");
        if s.doors_open != doors {
            return Err(format!("trial {t}: double toggle changed doors"));
        }
    }
    Ok(())
}

/// Exhaustive search of a one-room level; `Err` names two states sharing
/// an encoding, `Ok` carries the number of states visited.
pub fn encoding_injective(level_seed: u64) -> Result<usize, String> {
    use crate::gridworld::{encode_obs, Action, GridState};
    use std::collections::{HashMap, HashSet};
    let start = GridState::new(generate_level(level_seed, Some(1)).expect("level"));
    let mut seen = HashMap::new();
    let mut visited = HashSet::new();
    let mut frontier = vec![start];
    while let Some(s) = frontier.pop() {
        if !visited.insert((s.agent, s.doors_open.clone())) {
            continue;
        }
        let key: Vec<u64> = encode_obs(&s).iter().map(|v| v.to_bits()).collect();
        if let Some(prev) = seen.insert(key, s.agent) {
            return Err(format!("{prev:?} and {:?} encode identically", s.agent));
        }
        for a in Action::ALL {
            let mut n = s.clone();
            n.step_count = 0;
            n.done = false;
            n.step(a).expect("live");
            if (n.agent.x, n.agent.y) != n.level.goal_pos {
                frontier.push(n);
            }
        }
    }
    Ok(visited.len())
}

/// Two backward passes over identically built graphs give identical bits.
pub fn backward_deterministic(seed: u64) -> bool {
    let n0 = multiroom_net(MultiroomArch::Ibac, seed);
    let batch = perturbed_batch(&n0, 2, 8, seed);
    let adv = compute_gae(&batch, 0.99, 0.95);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let grad = || {
        let mut n = n0.clone();
        sni_gradient(&mut n, &batch, &adv.advantages, &adv.value_targets, &idx, &SniConfig::for_arch(MultiroomArch::Ibac), &mut stream_from_seed(seed)).expect("gradient");
        n.store.flat_grad().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    grad() == grad()
}

/// `d/dx Σ x·sg(x)` is `sg(x)` exactly: nothing flows through the stopped factor.
pub fn stop_gradient_blocks(seed: u64) -> bool {
    let mut rng = stream_from_seed(seed);
    let v: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let x = g.variable(&[3, 4], v.clone()).expect("shape");
    let s = g.stop_gradient(x);
    let p = g.mul(x, s).expect("shape");
    let r = g.sum(p);
    g.backward(r).expect("backward");
    g.grad(x) == v
}

/// Largest `|∂KL/∂μ − μ|` for the KL to a standard normal.
pub fn kl_mean_gradient_gap(seed: u64) -> f64 {
    let mut rng = stream_from_seed(seed);
    let (m, s) = random_gaussian(&mut rng, 8);
    let mut g = Graph::new();
    let mv = g.variable(&[1, 8], m.clone()).expect("shape");
    let sv = g.variable(&[1, 8], s).expect("shape");
    let kl = DiagGaussianParams::new(&mut g, mv, sv).expect("params").kl_to_standard(&mut g).expect("kl");
    let r = g.sum(kl);
    g.backward(r).expect("backward");
    g.grad(mv).iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Largest relative deviation of `‖θ_t‖` from `(1 − αλ)^t ‖θ_0‖` over
/// `steps` zero-gradient steps.
pub fn weight_decay_geometric(steps: usize) -> f64 {
    let mut store = crate::diffcore::ParamStore::new();
    let mut rng = stream_from_seed(4);
    store.add("w", &[5, 5], (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let norm = |s: &crate::diffcore::ParamStore| s.flat_values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let n0 = norm(&store);
    let cfg = AdamConfig::new(1e-2).with_weight_decay(0.5);
    let mut opt = AdamState::new(cfg, &store);
    let mut worst = 0.0f64;
    for t in 1..=steps {
        store.zero_grad();
        opt.step(&mut store);
        let expect = n0 * (1.0 - 1e-2 * 0.5f64).powi(t as i32);
        worst = worst.max((norm(&store) - expect).abs() / expect);
    }
    worst
}

/// Empirical action frequencies from `draws` samples of a categorical.
pub fn categorical_frequencies(logits: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    let mut g = Graph::inference();
    let l = g.constant(&[1, logits.len()], logits.to_vec()).expect("shape");
    let c = CategoricalParams::from_logits(&mut g, l).expect("logits");
    let mut rng = stream_from_seed(seed);
    let mut counts = vec![0usize; logits.len()];
    for _ in 0..draws {
        counts[c.sample(&g, &mut rng)[0]] += 1;
    }
    counts.into_iter().map(|c| c as f64 / draws as f64).collect()
}

/// Sample mean of `draws` reparameterized draws from N(0, 1).
pub fn reparam_sample_mean(draws: usize, seed: u64) -> f64 {
    let mut g = Graph::inference();
    let m = g.constant(&[1, draws], vec![0.0; draws]).expect("shape");
    let s = g.constant(&[1, draws], vec![0.0; draws]).expect("shape");
    let z = DiagGaussianParams::new(&mut g, m, s).expect("params").reparam_sample(&mut g, &mut stream_from_seed(seed)).expect("sample");
    g.value(z).iter().sum::<f64>() / draws as f64
}

/// Per-class counts for `n` rows of the default dataset.
pub fn class_histogram(n: usize, seed: u64) -> Vec<usize> {
    let bank = make_pattern_bank(&DataConfig::default(), seed).expect("default config");
    let ds = generate_dataset(&bank, n, 1.0, seed + 1, Split::Train).expect("train split");
    let mut counts = vec![0usize; bank.config.n_classes];
    for &c in &ds.labels {
        counts[c] += 1;
    }
    counts
}

/// g-side identity across splits, f-side difference, and purity of generation.
pub fn dataset_invariants(seed: u64) -> Result<(), String> {
    use crate::supervised::redraw_test_bank;
    let cfg = DataConfig { omega_f: 3, ..DataConfig::default() };
    let bank = make_pattern_bank(&cfg, seed).map_err(|e| e.to_string())?;
    let test = redraw_test_bank(&bank, seed ^ 1);
    if test.g_patterns != bank.g_patterns || test.g_locations != bank.g_locations {
        return Err("g side differs across splits".into());
    }
    if test.f_patterns == bank.f_patterns {
        return Err("test f patterns were not redrawn".into());
    }
    let a = generate_dataset(&bank, 50, 1.0, seed, Split::Train).map_err(|e| e.to_string())?;
    let b = generate_dataset(&bank, 50, 1.0, seed, Split::Train).map_err(|e| e.to_string())?;
    if a != b {
        return Err("generation is not a pure function of its arguments".into());
    }
    for i in 0..a.len() {
        let p = a.provenance[i];
        if a.row(i)[p.g_location..p.g_location + cfg.d_g] != bank.g_patterns[a.labels[i]][p.g_index][..] {
            return Err(format!("row {i}: g segment is not the recorded pattern"));
        }
    }
    Ok(())
}

/// Suspended forward passes are bitwise repeatable for every multiroom arch.
pub fn suspended_forward_pure(seed: u64) -> bool {
    let mut rng = stream_from_seed(seed);
    let obs: Vec<f64> = (0..3 * GRID * GRID * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    [MultiroomArch::Baseline, MultiroomArch::Dropout, MultiroomArch::Ibac].into_iter().all(|arch| {
        let n = multiroom_net(arch, seed);
        let run = |noise: u64| {
            let mut g = Graph::inference();
            let x = g.constant(&[3, GRID, GRID, 3], obs.clone()).expect("obs");
            let out = n.forward(&mut g, x, NoiseMode::Suspended, &mut stream_from_seed(noise)).expect("forward");
            (g.value(out.action_params.log_probs()).to_vec(), g.value(out.value).to_vec())
        };
        run(1) == run(2)
    })
}
