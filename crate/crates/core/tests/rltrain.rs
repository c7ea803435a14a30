use proptest::prelude::*;
use regrl::diffcore::Graph;
use regrl::harness::checks;
use regrl::gridworld::{generate_level, Direction, VecEnv, GRID};
use regrl::netblocks::{MultiroomArch, MultiroomNet, NoiseMode};
use regrl::rltrain::*;
use regrl::rng::{stream_from_seed, SeedTree};

fn net(arch: MultiroomArch, seed: u64) -> MultiroomNet {
    checks::multiroom_net(arch, seed)
}

fn fixed_batch(net: &MultiroomNet, n_envs: usize, n_steps: usize, seed: u64) -> RolloutBatch {
    checks::perturbed_batch(net, n_envs, n_steps, seed)
}

fn all_idx(b: &RolloutBatch) -> Vec<usize> {
    (0..b.len()).collect()
}

fn plain_cfg(arch: MultiroomArch, lambda: f64) -> SniConfig {
    SniConfig { lambda, normalize_advantages: false, epochs: 1, minibatches: 1, ..SniConfig::for_arch(arch) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn one_update_matches_straight_line_reference(seed in 0u64..1_000_000) {
        let r = checks::oracle_equivalence(seed);
        prop_assert!(r.loss_rel <= 1e-10 && r.grad_rel <= 1e-10 && r.step_rel <= 1e-10, "{r:?}");
    }

    #[test]
    fn sni_endpoints_and_linearity(seed in 0u64..1_000_000, arch_i in 0usize..2) {
        let r = checks::sni_structure([MultiroomArch::Ibac, MultiroomArch::Dropout][arch_i], seed);
        prop_assert!(r.det_endpoint_bitwise);
        prop_assert!(r.linearity_rel <= 1e-12, "{}", r.linearity_rel);
        prop_assert!(r.endpoint_gap > 1e-8, "noise should change the policy gradient");
    }
}

#[test]
fn baseline_gradient_ignores_lambda() {
    let n0 = net(MultiroomArch::Baseline, 3);
    let batch = fixed_batch(&n0, 2, 8, 3);
    let adv = compute_gae(&batch, 0.99, 0.95);
    let grads: Vec<Vec<f64>> = [0.0, 0.3, 1.0]
        .iter()
        .map(|&l| {
            let mut n = n0.clone();
            sni_gradient(&mut n, &batch, &adv.advantages, &adv.value_targets, &all_idx(&batch), &plain_cfg(MultiroomArch::Baseline, l), &mut stream_from_seed(1)).unwrap();
            n.store.flat_grad()
        })
        .collect();
    assert_eq!(grads[0], grads[1]);
    assert_eq!(grads[1], grads[2]);
}

#[test]
fn rollout_is_deterministic_and_consistent() {
    let n = net(MultiroomArch::Ibac, 11);
    let collect = || {
        let tree = SeedTree::new(4);
        let mut envs = VecEnv::new(16, &tree, "env-gen", None).unwrap();
        collect_rollout(&n, &mut envs, 128, &mut tree.stream("action-sampling", 0)).unwrap().0
    };
    let (a, b) = (collect(), collect());
    assert_eq!(a, b);
    assert_eq!(a.actions.len(), 128 * 16);
    assert_eq!(a.observations.len(), 128 * 16 * 363);
    for v in [&a.rewards, &a.rollout_log_probs, &a.rollout_values] {
        assert_eq!(v.len(), 128 * 16);
    }
    assert!(a.rollout_log_probs.iter().all(|l| l.is_finite() && *l <= 0.0));

    let mut g = Graph::inference();
    let obs = g.constant(&[a.len(), GRID, GRID, 3], a.observations.clone()).unwrap();
    let out = n.forward(&mut g, obs, NoiseMode::Suspended, &mut stream_from_seed(0)).unwrap();
    let lp = out.action_params.log_prob(&mut g, &a.actions).unwrap();
    assert_eq!(g.value(lp), a.rollout_log_probs.as_slice());
    assert_eq!(g.value(out.value), a.rollout_values.as_slice());
}

#[test]
fn first_minibatch_det_kl_proxy_is_zero() {
    for arch in [MultiroomArch::Baseline, MultiroomArch::Dropout, MultiroomArch::Ibac] {
        let mut n = net(arch, 21);
        let tree = SeedTree::new(21);
        let mut envs = VecEnv::new(16, &tree, "env-gen", None).unwrap();
        let (batch, _) = collect_rollout(&n, &mut envs, 32, &mut tree.stream("action-sampling", 0)).unwrap();
        let adv = compute_gae(&batch, 0.99, 0.95);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.reverse();
        let r = sni_gradient(&mut n, &batch, &adv.advantages, &adv.value_targets, &order[..128], &SniConfig::for_arch(arch), &mut stream_from_seed(0)).unwrap();
        assert_eq!(r.kl_proxy_det, 0.0, "{arch:?}");
        assert_eq!(kl_proxy(&n, &batch, &order[..77], KlPath::Det, &mut stream_from_seed(0)).unwrap(), 0.0);
    }
}

fn set_param(n: &mut MultiroomNet, name: &str, f: impl Fn(usize) -> f64) {
    let id = n.store.find(name).unwrap();
    for (i, v) in n.store.get_mut(id).value_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

#[test]
fn stochastic_kl_proxy_is_positive_with_wide_posterior() {
    let (mean, se) = checks::stochastic_kl_proxy(5, 50);
    assert!(mean > 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn vanishing_posterior_std_recovers_mean_update() {
    let e = checks::ibac_vanishing_std_gap(13);
    assert!(e <= 1e-4, "{e}");
}

#[test]
fn aux_terms() {
    let mut n = net(MultiroomArch::Ibac, 17);
    for name in ["bottleneck.mean.weight", "bottleneck.mean.bias", "bottleneck.log_std.weight", "bottleneck.log_std.bias"] {
        set_param(&mut n, name, |_| 0.0);
    }
    let tree = SeedTree::new(1);
    let envs = VecEnv::new(8, &tree, "env-gen", None).unwrap();
    let obs = envs.observations();
    let (kl, _) = ibac_aux_terms(&n, &obs, NoiseMode::Stochastic, &mut stream_from_seed(0)).unwrap();
    assert_eq!(kl, 0.0);

    let mut n = net(MultiroomArch::Ibac, 17);
    set_param(&mut n, "bottleneck.log_std.weight", |_| 0.0);
    set_param(&mut n, "bottleneck.log_std.bias", |_| -9.0);
    let (_, h_stoch) = ibac_aux_terms(&n, &obs, NoiseMode::Stochastic, &mut stream_from_seed(0)).unwrap();
    let (_, h_bar) = ibac_aux_terms(&n, &obs, NoiseMode::Suspended, &mut stream_from_seed(0)).unwrap();
    assert!((h_stoch - h_bar).abs() < 1e-6);

    // d(mean KL)/d(mean bias) = column mean of the posterior means
    let mut g = Graph::new();
    let x = g.constant(&[8, GRID, GRID, 3], obs.clone()).unwrap();
    let out = n.forward(&mut g, x, NoiseMode::Suspended, &mut stream_from_seed(0)).unwrap();
    let lat = out.latent.unwrap();
    let kl = lat.kl_to_standard(&mut g).unwrap();
    let kl = g.mean(kl);
    g.backward(kl).unwrap();
    let mut store = n.store.clone();
    store.zero_grad();
    g.accumulate_param_grads(&mut store);
    let means = g.value(lat.mean).to_vec();
    let grad = store.get(store.find("bottleneck.mean.bias").unwrap()).grad().to_vec();
    for j in 0..64 {
        let expect = (0..8).map(|i| means[i * 64 + j]).sum::<f64>() / 8.0;
        assert!((grad[j] - expect).abs() < 1e-12);
    }
    let (kl_base, _) = ibac_aux_terms(&self::net(MultiroomArch::Baseline, 1), &obs, NoiseMode::Suspended, &mut stream_from_seed(0)).unwrap();
    assert_eq!(kl_base, 0.0);
}

#[test]
fn untrained_policy_matches_uniform_random_on_one_room() {
    let (p, q, se) = checks::untrained_vs_uniform(2, 1000);
    assert!((p - q).abs() <= 3.0 * se, "{p} vs {q} (se {se})");
}

#[test]
fn cycled_evaluation_counts_and_bounds() {
    let n = net(MultiroomArch::Dropout, 2);
    let rep = evaluate_policy(&n, 60, true, 5).unwrap();
    assert_eq!(rep.by_rooms.iter().map(|r| r.episodes).sum::<usize>(), 60);
    assert!(rep.by_rooms.iter().all(|r| r.episodes == 20));
    assert!((0.0..=1.0).contains(&rep.success_rate));
    let again = evaluate_policy(&n, 60, true, 5).unwrap();
    assert_eq!(rep, again);
}

#[test]
fn always_forward_policy_reaches_goal_straight_ahead() {
    let mut n = net(MultiroomArch::Baseline, 2);
    set_param(&mut n, "policy.weight", |_| 0.0);
    set_param(&mut n, "policy.bias", |i| if i == 2 { 100.0 } else { 0.0 });
    let mut level = (0..).map(|s| generate_level(s, Some(1)).unwrap()).find(|l| l.agent_start.y == l.goal_pos.1).unwrap();
    level.agent_start.dir = if level.goal_pos.0 > level.agent_start.x { Direction::E } else { Direction::W };
    let rep = evaluate_levels(&n, &[level], &mut stream_from_seed(0)).unwrap();
    assert_eq!(rep.success_rate, 1.0);
}

#[test]
fn trainer_runs_and_is_reproducible() {
    let mut cfg = RlTrainConfig::new(MultiroomArch::Ibac);
    cfg.n_envs = 4;
    cfg.n_steps = 16;
    cfg.total_frames = 128;
    let run = || {
        let mut t = Trainer::new(cfg.clone(), 3).unwrap();
        let mut out = Vec::new();
        while !t.done() {
            let r = t.iterate().unwrap();
            assert!(r.update.kl_proxy_det.is_finite() && r.update.kl_proxy_stoch.unwrap().is_finite());
            out.push((r.update.total_loss, r.update.kl_proxy_det));
        }
        (out, t.net().store.flat_values())
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.0.len(), 2);
}

#[test]
fn config_validation() {
    let mut c = RlTrainConfig::new(MultiroomArch::Dropout);
    c.sni = Some(SniConfig { lambda: 1.5, ..SniConfig::for_arch(MultiroomArch::Dropout) });
    assert!(matches!(Trainer::new(c.clone(), 0), Err(RlError::Config(_))));
    c.sni = Some(SniConfig::for_arch(MultiroomArch::Ibac));
    assert!(matches!(Trainer::new(c, 0), Err(RlError::Config(_))));
}
