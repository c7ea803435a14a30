//! One line per acceptance criterion.
//!
//! Criteria 7 and 8 need ten 5M-frame training runs (about two hours each
//! on one core) and are skipped unless `REGRL_ACCEPT_RL=1` (train now) or
//! `REGRL_ACCEPT_RL_DIR=<dir>` (score finished runs) is set.
//! `REGRL_ACCEPT_QUICK=1` skips criterion 6. Failures are reported but only
//! change the exit status under `REGRL_ACCEPT_STRICT=1`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use regrl::harness::checks::*;
use regrl::harness::{read_metrics, run_rl, RlRunConfig, RunConfig, CONFIG_FILE, METRICS_FILE};
use regrl::netblocks::{MultiroomArch, SupervisedArch};
use regrl::rltrain::{EvalReport, RlTrainConfig, SniConfig};
use regrl::supervised::{run_sweep, SweepCell, SweepConfig};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, budget_s: Option<f64>, f: impl FnOnce() -> Verdict) {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        let over = budget_s.is_some_and(|b| secs > b);
        let time = match budget_s {
            Some(b) => format!("{secs:.1}s, budget {b}s"),
            None => format!("{secs:.1}s"),
        };
        let (tag, msg) = match v {
            Verdict::Pass(m) if !over => ("PASS", m),
            Verdict::Pass(m) => ("FAIL", format!("{m}; over time budget")),
            Verdict::Fail(m) => ("FAIL", m),
            Verdict::Skip(m) => ("SKIP", m),
        };
        if tag == "FAIL" {
            self.failed += 1;
        }
        println!("{tag} [{id}] {name}: {msg} ({time})");
    }
}

fn verdict(ok: bool, msg: String) -> Verdict {
    if ok {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(msg)
    }
}

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| !v.is_empty() && v != "0")
}

fn criterion_1() -> Verdict {
    let w = (0..8).map(|s| oracle_equivalence(s).worst()).fold(0.0, f64::max);
    verdict(w <= 1e-10, format!("worst of loss/grad/step relative error over 8 batches {w:.2e} (tol 1e-10)"))
}

fn criterion_2() -> Verdict {
    let mut bitwise = true;
    let mut lin = 0.0f64;
    for arch in [MultiroomArch::Ibac, MultiroomArch::Dropout] {
        for s in 0..4 {
            let r = sni_structure(arch, s);
            bitwise &= r.det_endpoint_bitwise && r.endpoint_gap > 1e-8;
            lin = lin.max(r.linearity_rel);
        }
    }
    verdict(bitwise && lin <= 1e-12, format!("λ=1 bitwise = suspended objective: {bitwise}; λ=½ vs endpoint mean {lin:.2e} (tol 1e-12)"))
}

fn criterion_3() -> Verdict {
    let mut worst = ("", 0.0f64);
    for seed in 0..5 {
        for (op, e) in op_gradient_errors(seed) {
            if e > worst.1 {
                worst = (op, e);
            }
        }
        for arch in [MultiroomArch::Baseline, MultiroomArch::Dropout, MultiroomArch::Ibac] {
            let e = multiroom_gradient_error(arch, seed);
            if e > worst.1 {
                worst = (arch.name(), e);
            }
        }
        for arch in SupervisedArch::ALL {
            let e = supervised_gradient_error(arch, seed);
            if e > worst.1 {
                worst = (arch.name(), e);
            }
        }
    }
    verdict(worst.1 <= 1e-4, format!("worst relative error {:.2e} ({}) at h=1e-5, 5 seeds (tol 1e-4)", worst.1, worst.0))
}

fn criterion_4() -> Verdict {
    let pairs = gaussian_kl_monte_carlo(20, 100_000, 3, 2024);
    let zd = pairs.iter().map(|p| p.0.z()).fold(0.0, f64::max);
    let zi = pairs.iter().map(|p| p.1.z()).fold(0.0, f64::max);
    verdict(zd <= 3.0 && zi <= 3.0, format!("20 draws × 1e5 samples, max |z| direct {zd:.2}, entropy identity {zi:.2} (tol 3 SE)"))
}

fn criterion_5() -> Verdict {
    let r = level_generator_survey(10_000);
    let dev = r.room_frequencies.iter().map(|f| (f - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    verdict(r.unsolvable.is_empty() && dev <= 0.02, format!("{} of 10000 unsolvable; room frequencies {:.4?} (tol 1/3 ± 0.02)", r.unsolvable.len(), r.room_frequencies))
}

fn ordered(vib: &SweepCell, base: &SweepCell) -> bool {
    vib.mean < base.mean && vib.mean + vib.stderr < base.mean - base.stderr
}

fn criterion_6() -> Verdict {
    if env_flag("REGRL_ACCEPT_QUICK") {
        return Verdict::Skip("REGRL_ACCEPT_QUICK set".into());
    }
    let archs = vec![SupervisedArch::Baseline, SupervisedArch::Vib];
    // Only the extreme grid points enter the criterion.
    let wide = SweepConfig { archs: archs.clone(), ..SweepConfig::omega_f(vec![16]) };
    let small = SweepConfig { archs, ..SweepConfig::n_train(vec![250]) };
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, cfg, v) in [("ω_f=16, N=1000", wide, 16), ("N=250, ω_f=8", small, 250)] {
        let t = match run_sweep(&cfg, 0) {
            Ok(t) => t,
            Err(e) => return Verdict::Fail(format!("{label}: {e}")),
        };
        let (Some(vib), Some(base)) = (t.cell(v, SupervisedArch::Vib), t.cell(v, SupervisedArch::Baseline)) else {
            return Verdict::Fail(format!("{label}: missing cells"));
        };
        let o = ordered(vib, base) && vib.n_failed == 0 && base.n_failed == 0;
        ok &= o;
        let loss = |arch, seed| t.rows.iter().find(|r| r.arch == arch && r.seed == seed).map(|r| r.final_test_loss);
        let paired = (0..cfg.n_seeds).filter(|&s| matches!((loss(SupervisedArch::Vib, s), loss(SupervisedArch::Baseline, s)), (Some(v), Some(b)) if v < b)).count();
        parts.push(format!("{label}: vib {:.4} ± {:.4} vs baseline {:.4} ± {:.4}, vib lower on {paired}/{} paired seeds", vib.mean, vib.stderr, base.mean, base.stderr, cfg.n_seeds));
    }
    verdict(ok, format!("{} (5 seeds; need vib < baseline with disjoint mean ± SE)", parts.join("; ")))
}

struct RlRun {
    arch: MultiroomArch,
    eval: EvalReport,
    kl_det: Vec<Option<f64>>,
    kl_stoch: Vec<Option<f64>>,
}

fn rl_configs(frames: u64, seeds: u64, root: &Path) -> Vec<RlRunConfig> {
    let mut out = Vec::new();
    for (arch, tag) in [(MultiroomArch::Baseline, "baseline"), (MultiroomArch::Ibac, "ibac-sni")] {
        for seed in 0..seeds {
            let mut train = RlTrainConfig::new(arch);
            train.total_frames = frames;
            if arch == MultiroomArch::Ibac {
                train.sni = Some(SniConfig { lambda: 0.5, ..SniConfig::for_arch(arch) });
            }
            out.push(RlRunConfig { seed, out_dir: root.join(format!("{tag}-{seed}")), train, eval_every: 100, eval_episodes: 300, checkpoint_every: 0, record_wall_clock: true });
        }
    }
    out
}

fn collect_runs(root: &Path) -> Result<Vec<RlRun>, String> {
    let mut runs = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root).map_err(|e| format!("{}: {e}", root.display()))?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join("eval.json").is_file()).collect();
    dirs.sort();
    for d in dirs {
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(d.join(CONFIG_FILE)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let RunConfig::RlMultiroom(cfg) = cfg else { continue };
        let eval: EvalReport = serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let recs = read_metrics(&d.join(METRICS_FILE)).map_err(|e| e.to_string())?;
        if cfg.train.arch == MultiroomArch::Ibac && cfg.train.sni().lambda != 0.5 {
            continue;
        }
        runs.push(RlRun {
            arch: cfg.train.arch,
            eval,
            kl_det: recs.iter().map(|r| r.get("kl_proxy_det")).collect(),
            kl_stoch: recs.iter().map(|r| r.get("kl_proxy_stoch")).collect(),
        });
    }
    Ok(runs)
}

fn rl_results() -> Option<Result<(Vec<RlRun>, String), String>> {
    if let Ok(dir) = std::env::var("REGRL_ACCEPT_RL_DIR") {
        return Some(collect_runs(Path::new(&dir)).map(|r| (r, format!("runs under {dir}"))));
    }
    if !env_flag("REGRL_ACCEPT_RL") {
        return None;
    }
    let frames: u64 = std::env::var("REGRL_ACCEPT_RL_FRAMES").ok().and_then(|v| v.parse().ok()).unwrap_or(5_000_000);
    let seeds: u64 = std::env::var("REGRL_ACCEPT_RL_SEEDS").ok().and_then(|v| v.parse().ok()).unwrap_or(5);
    let root = PathBuf::from(std::env::var("REGRL_OUT").unwrap_or_else(|_| "target/acceptance-rl".into()));
    for cfg in rl_configs(frames, seeds, &root) {
        if let Err(e) = run_rl(&cfg, &cfg.out_dir) {
            return Some(Err(format!("{}: {e}", cfg.out_dir.display())));
        }
    }
    Some(collect_runs(&root).map(|r| (r, format!("{seeds} seeds × {frames} frames"))))
}

fn two_room(runs: &[RlRun], arch: MultiroomArch) -> (f64, usize) {
    let xs: Vec<f64> = runs.iter().filter(|r| r.arch == arch).filter_map(|r| r.eval.by_rooms.iter().find(|s| s.n_rooms == 2)).map(|s| s.success_rate).collect();
    (xs.iter().sum::<f64>() / xs.len().max(1) as f64, xs.len())
}

fn criterion_7(res: &Option<Result<(Vec<RlRun>, String), String>>) -> Verdict {
    match res {
        None => Verdict::Skip("needs 10 × 5M-frame runs (~20 h on one core); set REGRL_ACCEPT_RL=1 or REGRL_ACCEPT_RL_DIR".into()),
        Some(Err(e)) => Verdict::Fail(e.clone()),
        Some(Ok((runs, what))) => {
            let (b, nb) = two_room(runs, MultiroomArch::Baseline);
            let (i, ni) = two_room(runs, MultiroomArch::Ibac);
            let ok = nb > 0 && ni > 0 && i > b && b < 0.10 && i > 0.20;
            verdict(ok, format!("{what}: 2-room success ibac-sni {i:.3} (n={ni}) vs baseline {b:.3} (n={nb}); need ibac > baseline, baseline < 0.10, ibac > 0.20"))
        }
    }
}

fn criterion_8(res: &Option<Result<(Vec<RlRun>, String), String>>) -> Verdict {
    match res {
        None => Verdict::Skip("uses criterion 7's IBAC-SNI runs".into()),
        Some(Err(e)) => Verdict::Fail(e.clone()),
        Some(Ok((runs, what))) => {
            let ibac: Vec<&RlRun> = runs.iter().filter(|r| r.arch == MultiroomArch::Ibac).collect();
            let finite = ibac.iter().all(|r| r.kl_det.iter().chain(&r.kl_stoch).all(|v| v.is_some()));
            let all_det: Vec<f64> = ibac.iter().flat_map(|r| r.kl_det.iter().flatten().copied()).collect();
            let all_stoch: Vec<f64> = ibac.iter().flat_map(|r| r.kl_stoch.iter().flatten().copied()).collect();
            let d = all_det.iter().sum::<f64>() / all_det.len().max(1) as f64;
            let s = all_stoch.iter().sum::<f64>() / all_stoch.len().max(1) as f64;
            verdict(!ibac.is_empty() && finite && d <= s, format!("{what}: mean kl_proxy det {d:.3e} vs stoch {s:.3e}; all finite: {finite}"))
        }
    }
}

fn main() {
    // libtest flags such as --nocapture or a name filter are ignored.
    let mut r = Report { failed: 0 };
    r.line("1", "oracle equivalence", Some(1.0), criterion_1);
    r.line("2", "SNI structure", Some(1.0), criterion_2);
    r.line("3", "gradient hygiene", Some(60.0), criterion_3);
    r.line("4", "distribution oracles", Some(30.0), criterion_4);
    r.line("5", "level generator", Some(30.0), criterion_5);
    r.line("6", "supervised ordering", Some(1800.0), criterion_6);
    let rl = rl_results();
    r.line("7", "multiroom success ordering", None, || criterion_7(&rl));
    r.line("8", "KL proxy ordering", None, || criterion_8(&rl));
    println!("SKIP [9] coinrun results: not reproducible here (external game engine); no criterion");
    println!("{} failed", r.failed);
    if r.failed > 0 && env_flag("REGRL_ACCEPT_STRICT") {
        std::process::exit(1);
    }
}
