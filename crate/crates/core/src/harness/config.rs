use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::rltrain::{RlError, RlTrainConfig};
use crate::supervised::SweepConfig;

/// Overrides the `out_dir` of any config when set.
pub const OUT_ENV: &str = "REGRL_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunConfig {
    RlMultiroom(RlRunConfig),
    SupSweep(SupRunConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlRunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "rl_out")]
    pub out_dir: PathBuf,
    pub train: RlTrainConfig,
    /// Iterations between evaluations; 0 evaluates only after the last one.
    #[serde(default = "eval_every")]
    pub eval_every: u64,
    #[serde(default = "eval_episodes")]
    pub eval_episodes: usize,
    /// Iterations between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Adds wall-clock timings to metrics, which makes files differ run to run.
    #[serde(default)]
    pub record_wall_clock: bool,
}

fn rl_out() -> PathBuf {
    PathBuf::from("runs/rl")
}
fn eval_every() -> u64 {
    100
}
fn eval_episodes() -> usize {
    300
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupRunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "sup_out")]
    pub out_dir: PathBuf,
    pub sweep: SweepConfig,
}

fn sup_out() -> PathBuf {
    PathBuf::from("runs/sup")
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        match self {
            RunConfig::RlMultiroom(c) => c.seed,
            RunConfig::SupSweep(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            RunConfig::RlMultiroom(c) => c.seed = seed,
            RunConfig::SupSweep(c) => c.seed = seed,
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            RunConfig::RlMultiroom(c) => &c.out_dir,
            RunConfig::SupSweep(c) => &c.out_dir,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match self {
            RunConfig::RlMultiroom(c) => c.train.validate().map_err(|e| match e {
                RlError::Config(m) => HarnessError::Config(format!("train: {m}")),
                other => HarnessError::Rl(other),
            }),
            RunConfig::SupSweep(c) => c.sweep.validate().map_err(|e| HarnessError::Config(format!("sweep: {e}"))),
        }
    }
}

/// Parses and validates; serde's messages name the offending field and position.
pub fn parse_config(text: &str) -> Result<RunConfig, HarnessError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `$REGRL_OUT` if set and non-empty, else the configured directory.
pub fn resolve_out_dir(configured: &Path) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_configs_parse() {
        let rl = parse_config(r#"{"kind": "rl_multiroom", "seed": 3, "train": {"arch": "ibac"}}"#).unwrap();
        assert_eq!(rl.seed(), 3);
        let sup = parse_config(r#"{"kind": "sup_sweep", "sweep": {"axis": "n_train", "values": [250, 500]}}"#).unwrap();
        assert_eq!(sup.out_dir(), Path::new("runs/sup"));
    }

    #[test]
    fn unknown_and_invalid_fields_are_named() {
        let e = parse_config(r#"{"kind": "rl_multiroom", "train": {"arch": "ibac", "lr": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("unknown field `lr`"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = parse_config(r#"{"kind": "rl_multiroom", "train": {"arch": "ibac", "n_rooms": 7}}"#).unwrap_err();
        assert!(e.to_string().contains("n_rooms"), "{e}");
        let e = parse_config(r#"{"kind": "nope"}"#).unwrap_err();
        assert!(e.to_string().contains("unknown variant"), "{e}");
    }
}
