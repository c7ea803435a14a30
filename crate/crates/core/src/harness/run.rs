use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use super::{HarnessError, MetricRecord, MetricsWriter, RlRunConfig, SupRunConfig};
use crate::diffcore::{load_checkpoint, restore_into, save_checkpoint};
use crate::netblocks::{MultiroomArch, MultiroomNet};
use crate::rltrain::{EvalReport, EvalRooms, IterationReport, Trainer};
use crate::rng::stream_from_seed;
use crate::supervised::{run_sweep, write_sweep_csv, SweepTable};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "policy.ckpt";

pub fn save_policy(path: &Path, net: &MultiroomNet, extra: serde_json::Value) -> Result<(), HarnessError> {
    let meta = json!({ "arch": net.arch, "frozen_mask_seed": net.frozen_mask_seed(), "run": extra });
    save_checkpoint(path, &net.store, meta).map_err(|e| HarnessError::Checkpoint(e.to_string()))
}

/// Rebuilds the network named in the checkpoint, restores its parameters
/// and re-freezes the dropout mask it was saved with.
pub fn load_policy(path: &Path) -> Result<MultiroomNet, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::MissingCheckpoint(path.to_path_buf()));
    }
    let (header, store) = load_checkpoint(path).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
    let arch: MultiroomArch = serde_json::from_value(header.meta["arch"].clone()).map_err(|e| HarnessError::Checkpoint(format!("meta.arch: {e}")))?;
    let mut net = MultiroomNet::build(arch, &mut stream_from_seed(0));
    restore_into(&mut net.store, &store).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
    if let Some(seed) = header.meta["frozen_mask_seed"].as_u64() {
        net.freeze_dropout_mask(seed);
    }
    Ok(net)
}

#[derive(Clone, Debug)]
pub struct RlRunSummary {
    pub out_dir: PathBuf,
    pub iterations: u64,
    pub frames: u64,
    pub final_eval: EvalReport,
}

fn training_record(rep: &IterationReport) -> MetricRecord {
    let u = &rep.update;
    let mut r = MetricRecord::new(rep.iteration, rep.frames);
    r.set("loss_total", u.total_loss)
        .set_opt("loss_policy_det", u.policy_loss_det)
        .set_opt("loss_policy_stoch", u.policy_loss_stoch)
        .set("loss_value", u.value_loss)
        .set("loss_kl", u.kl_loss)
        .set("entropy", u.entropy)
        .set("kl_proxy_det", u.kl_proxy_det)
        .set_opt("kl_proxy_stoch", u.kl_proxy_stoch)
        .set("grad_norm", u.grad_norm)
        .set("skipped_minibatches", u.skipped as f64);
    let n = rep.episodes.len();
    r.set("train_episodes", n as f64);
    let (succ, ret) = if n == 0 {
        (None, None)
    } else {
        let s = rep.episodes.iter().filter(|e| e.success).count() as f64 / n as f64;
        let m = rep.episodes.iter().map(|e| e.episode_return).sum::<f64>() / n as f64;
        (Some(s), Some(m))
    };
    r.set_opt("train_success_rate", succ).set_opt("train_mean_return", ret);
    r
}

fn add_eval(r: &mut MetricRecord, e: Option<&EvalReport>) {
    r.set_opt("success_rate", e.map(|e| e.success_rate)).set_opt("mean_return", e.map(|e| e.mean_return));
    for k in 1..=3u8 {
        let s = e.and_then(|e| e.by_rooms.iter().find(|s| s.n_rooms == k));
        r.set_opt(&format!("success_rate_rooms{k}"), s.map(|s| s.success_rate));
        r.set_opt(&format!("success_se_rooms{k}"), s.map(|s| s.success_se));
    }
}

/// Trains to the frame budget, logging one record per iteration.
pub fn run_rl(cfg: &RlRunConfig, out_dir: &Path) -> Result<RlRunSummary, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), serde_json::to_string_pretty(&super::RunConfig::RlMultiroom(cfg.clone()))?)?;
    let mut metrics = MetricsWriter::create(&out_dir.join(METRICS_FILE))?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.seed)?;
    let start = Instant::now();
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let mut last_eval = None;
    while !trainer.done() {
        let rep = trainer.iterate()?;
        let last = trainer.done();
        let eval = if last || (cfg.eval_every > 0 && rep.iteration % cfg.eval_every == 0) {
            Some(trainer.evaluate(cfg.eval_episodes, EvalRooms::Cycle)?)
        } else {
            None
        };
        let mut r = training_record(&rep);
        add_eval(&mut r, eval.as_ref());
        if cfg.record_wall_clock {
            r.wall_seconds = Some(start.elapsed().as_secs_f64());
        }
        metrics.append(&r)?;
        if let Some(e) = &eval {
            log::info!("iteration {} frames {}: success {:.3} ({:?})", rep.iteration, rep.frames, e.success_rate, e.by_rooms.iter().map(|s| s.success_rate).collect::<Vec<_>>());
            last_eval = eval;
        }
        if last || (cfg.checkpoint_every > 0 && rep.iteration % cfg.checkpoint_every == 0) {
            save_policy(&ckpt, trainer.net(), json!({ "seed": cfg.seed, "iteration": rep.iteration, "frames": rep.frames }))?;
        }
    }
    let final_eval = match last_eval {
        Some(e) => e,
        None => trainer.evaluate(cfg.eval_episodes, EvalRooms::Cycle)?,
    };
    std::fs::write(out_dir.join("eval.json"), serde_json::to_string_pretty(&final_eval)?)?;
    Ok(RlRunSummary { out_dir: out_dir.to_path_buf(), iterations: trainer.iteration(), frames: trainer.frames(), final_eval })
}

/// Runs the sweep and writes `sweep.csv`, `sweep.json` and one metrics
/// record per trained classifier.
pub fn run_sweep_job(cfg: &SupRunConfig, out_dir: &Path) -> Result<SweepTable, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), serde_json::to_string_pretty(&super::RunConfig::SupSweep(cfg.clone()))?)?;
    let table = run_sweep(&cfg.sweep, cfg.seed)?;
    write_sweep_csv(&table, std::fs::File::create(out_dir.join("sweep.csv"))?)?;
    std::fs::write(out_dir.join("sweep.json"), serde_json::to_string_pretty(&table)?)?;
    let mut metrics = MetricsWriter::create(&out_dir.join(METRICS_FILE))?;
    for (i, row) in table.rows.iter().enumerate() {
        let mut r = MetricRecord::new(i as u64 + 1, row.train_epochs as u64);
        r.set("axis_value", row.axis_value as f64).set("seed", row.seed as f64).set("test_loss", row.final_test_loss);
        metrics.append(&r)?;
    }
    Ok(table)
}
