use proptest::prelude::*;
use rand::Rng;
use regrl::diffcore::Graph;
use regrl::netblocks::{SupervisedArch, SupervisedNet};
use regrl::oracle::relative_error;
use regrl::rng::stream_from_seed;
use regrl::supervised::*;

fn small_hp(max_epochs: usize) -> TrainHp {
    TrainHp { max_epochs, ..TrainHp::default() }
}

#[test]
fn class_histogram_within_multinomial_bound() {
    let bank = make_pattern_bank(&DataConfig::default(), 11).unwrap();
    let ds = generate_dataset(&bank, 10_000, 1.0, 12, Split::Train).unwrap();
    let mut counts = [0usize; 5];
    for &c in &ds.labels {
        counts[c] += 1;
    }
    // sd = sqrt(10000 · 0.2 · 0.8) = 40, so 3 sd ≈ 120 < 130.
    for c in counts {
        assert!((c as i64 - 2000).abs() <= 130, "{counts:?}");
    }
}

#[test]
fn training_loss_gradient_spot_checks() {
    let bank = make_pattern_bank(&DataConfig::default(), 1).unwrap();
    let data = generate_dataset(&bank, 6, 1.0, 2, Split::Train).unwrap();
    let idx: Vec<usize> = (0..6).collect();
    for arch in SupervisedArch::ALL {
        for seed in 0..2u64 {
            let mut net = SupervisedNet::build(arch, &mut stream_from_seed(seed));
            let beta = if arch == SupervisedArch::Vib { 1e-3 } else { 0.0 };
            let loss_at = |net: &SupervisedNet| {
                let mut g = Graph::inference();
                let l = training_loss(&mut g, net, &data, &idx, beta, &mut stream_from_seed(99)).unwrap();
                g.scalar(l)
            };
            let mut g = Graph::new();
            let l = training_loss(&mut g, &net, &data, &idx, beta, &mut stream_from_seed(99)).unwrap();
            net.store.zero_grad();
            g.backward(l).unwrap();
            g.accumulate_param_grads(&mut net.store);

            let mut pick = stream_from_seed(1000 + seed);
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            let ids: Vec<String> = net.store.iter().map(|p| p.name().to_string()).collect();
            for name in ids {
                let id = net.store.find(&name).unwrap();
                let n = net.store.get(id).value().len();
                for _ in 0..4 {
                    let k = pick.gen_range(0..n);
                    let h = 1e-5;
                    let orig = net.store.get(id).value()[k];
                    net.store.get_mut(id).value_mut()[k] = orig + h;
                    let up = loss_at(&net);
                    net.store.get_mut(id).value_mut()[k] = orig - h;
                    let down = loss_at(&net);
                    net.store.get_mut(id).value_mut()[k] = orig;
                    analytic.push(net.store.get(id).grad()[k]);
                    numeric.push((up - down) / (2.0 * h));
                }
            }
            let err = relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "{} seed {seed}: rel err {err:e}", arch.name());
        }
    }
}

#[test]
fn trivial_dataset_is_learned_by_every_arch() {
    let cfg = DataConfig { sigma_eps: 0.0, ..DataConfig::default() };
    let bank = make_pattern_bank(&cfg, 5).unwrap();
    let train = generate_dataset(&bank, 200, 0.0, 6, Split::Train).unwrap();
    let test = generate_dataset(&bank, 300, 0.0, 7, Split::Train).unwrap();
    for arch in SupervisedArch::ALL {
        let (_, c) = train_classifier(arch, &train, &test, &small_hp(60), 3).unwrap();
        assert!(!c.failed);
        assert!(c.final_test_loss < 0.05, "{}: {}", arch.name(), c.final_test_loss);
        assert_eq!(c.final_test_accuracy, 1.0);
    }
}

#[test]
fn baseline_fits_default_training_set() {
    let bank = make_pattern_bank(&DataConfig::default(), 21).unwrap();
    let test_bank = redraw_test_bank(&bank, 22);
    let train = generate_dataset(&bank, 1000, 1.0, 23, Split::Train).unwrap();
    let test = generate_dataset(&test_bank, 200, 1.0, 24, Split::Test).unwrap();
    let (_, c) = train_classifier(SupervisedArch::Baseline, &train, &test, &TrainHp { max_epochs: 15, patience: 0, ..TrainHp::default() }, 25).unwrap();
    assert!(c.fit_epoch.is_some(), "train accuracy {:?}", c.train_accuracy);
    assert_eq!(c.train_accuracy.len(), c.epochs);
}

#[test]
fn vib_evaluation_is_deterministic() {
    let bank = make_pattern_bank(&DataConfig::default(), 31).unwrap();
    let data = generate_dataset(&bank, 64, 1.0, 32, Split::Train).unwrap();
    let (net, _) = train_classifier(SupervisedArch::Vib, &data, &data, &small_hp(1), 33).unwrap();
    let a = evaluate(&net, &data).unwrap();
    let b = evaluate(&net, &data).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1.to_bits(), b.1.to_bits());
}

#[test]
fn divergence_marks_run_failed() {
    let bank = make_pattern_bank(&DataConfig::default(), 41).unwrap();
    let data = generate_dataset(&bank, 64, 1.0, 42, Split::Train).unwrap();
    let hp = TrainHp { learning_rate: 10.0, max_epochs: 5, divergence_loss: 1e-3, ..TrainHp::default() };
    let (_, c) = train_classifier(SupervisedArch::Baseline, &data, &data, &hp, 43).unwrap();
    assert!(c.failed);
    assert!(c.final_test_loss.is_nan());
}

#[test]
fn sweep_table_dimensions_and_csv() {
    let cfg = SweepConfig {
        archs: vec![SupervisedArch::Baseline, SupervisedArch::Vib],
        n_seeds: 2,
        n_train: 40,
        n_test: 40,
        hp: small_hp(1),
        ..SweepConfig::omega_f(vec![1, 2, 4])
    };
    let t = run_sweep(&cfg, 7).unwrap();
    assert_eq!(t.rows.len(), 3 * 2 * 2);
    assert_eq!(t.cells.len(), 3 * 2);
    assert!(t.cells.iter().all(|c| c.n_runs + c.n_failed == 2));
    assert_eq!(t.cell(4, SupervisedArch::Vib).unwrap().axis_value, 4);
    assert_eq!(t, run_sweep(&cfg, 7).unwrap());

    let mut buf = Vec::new();
    write_sweep_csv(&t, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "omega_f,arch,seed,final_test_loss,train_epochs");
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("1,baseline,0,"));
}

#[test]
fn sweep_rejects_empty_grid() {
    let cfg = SweepConfig::n_train(vec![]);
    assert!(matches!(run_sweep(&cfg, 0), Err(SupError::Config(_))));
}

#[test]
fn mean_stderr_matches_hand_computation() {
    let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    // sample variance 5/3, n = 4
    assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dataset_is_pure_and_g_side_shared(bank_seed in any::<u64>(), row_seed in any::<u64>(), omega_f in 1usize..5, sigma in 0.0f64..2.0) {
        let cfg = DataConfig { omega_f, ..DataConfig::default() };
        let bank = make_pattern_bank(&cfg, bank_seed).unwrap();
        let a = generate_dataset(&bank, 20, sigma, row_seed, Split::Train).unwrap();
        let b = generate_dataset(&bank, 20, sigma, row_seed, Split::Train).unwrap();
        prop_assert_eq!(&a, &b);
        let test = redraw_test_bank(&bank, bank_seed ^ 1);
        prop_assert_eq!(&test.g_patterns, &bank.g_patterns);
        prop_assert_eq!(&test.g_locations, &bank.g_locations);
        prop_assert_ne!(&test.f_patterns, &bank.f_patterns);
        for p in &a.provenance {
            prop_assert!(p.f_index < omega_f && bank.g_locations.contains(&p.g_location));
        }
    }
}
