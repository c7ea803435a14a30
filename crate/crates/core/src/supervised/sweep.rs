use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_dataset, make_pattern_bank, redraw_test_bank, train_classifier, DataConfig, Split, SupError, TrainHp};
use crate::netblocks::{NetError, SupervisedArch};
use crate::rng::{streams, SeedTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    OmegaF,
    NTrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    #[serde(default = "all_archs")]
    pub archs: Vec<SupervisedArch>,
    #[serde(default = "five")]
    pub n_seeds: usize,
    /// `omega_f` here is the held value when sweeping `n_train`.
    #[serde(default)]
    pub data: DataConfig,
    /// Held value when sweeping `omega_f`.
    #[serde(default = "n_train")]
    pub n_train: usize,
    #[serde(default = "n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub hp: TrainHp,
}

fn all_archs() -> Vec<SupervisedArch> {
    SupervisedArch::ALL.to_vec()
}
fn five() -> usize {
    5
}
fn n_train() -> usize {
    1000
}
fn n_test() -> usize {
    5000
}

impl SweepConfig {
    pub fn omega_f(values: Vec<usize>) -> Self {
        Self { axis: SweepAxis::OmegaF, values, archs: all_archs(), n_seeds: 5, data: DataConfig::default(), n_train: 1000, n_test: 5000, hp: TrainHp::default() }
    }

    pub fn n_train(values: Vec<usize>) -> Self {
        Self { axis: SweepAxis::NTrain, data: DataConfig { omega_f: 8, ..DataConfig::default() }, ..Self::omega_f(values) }
    }

    pub fn validate(&self) -> Result<(), SupError> {
        if self.values.is_empty() || self.archs.is_empty() || self.n_seeds == 0 {
            return Err(SupError::Config("values, archs and n_seeds must be non-empty".into()));
        }
        if self.values.contains(&0) {
            return Err(SupError::Config("sweep values must be positive".into()));
        }
        self.data.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: usize,
    pub arch: SupervisedArch,
    pub seed: usize,
    /// NaN for failed runs.
    pub final_test_loss: f64,
    pub train_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis_value: usize,
    pub arch: SupervisedArch,
    pub mean: f64,
    pub stderr: f64,
    pub n_runs: usize,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, value: usize, arch: SupervisedArch) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.axis_value == value && c.arch == arch)
    }
}

fn run_job(cfg: &SweepConfig, tree: &SeedTree, vi: usize, seed: usize, arch: SupervisedArch) -> Result<SweepRow, NetError> {
    let value = cfg.values[vi];
    let (data, n) = match cfg.axis {
        SweepAxis::OmegaF => (DataConfig { omega_f: value, ..cfg.data }, cfg.n_train),
        SweepAxis::NTrain => (cfg.data, value),
    };
    // Data and initialization depend on (value, seed) only, so archs are paired.
    let cell = tree.child(streams::DATA, vi as u64).child(streams::DATA, seed as u64);
    let bank = make_pattern_bank(&data, cell.seed("bank", 0)).expect("validated config");
    let test_bank = redraw_test_bank(&bank, cell.seed("bank", 1));
    let train = generate_dataset(&bank, n, data.sigma_eps, cell.seed("rows", 0), Split::Train).expect("train bank");
    let test = generate_dataset(&test_bank, cfg.n_test, data.sigma_eps, cell.seed("rows", 1), Split::Test).expect("test bank");
    let (_, curves) = train_classifier(arch, &train, &test, &cfg.hp, cell.seed(streams::INIT, 0))?;
    log::info!("sweep {:?}={value} {} seed {seed}: test loss {:.4} after {} epochs", cfg.axis, arch.name(), curves.final_test_loss, curves.epochs);
    Ok(SweepRow { axis_value: value, arch, seed, final_test_loss: curves.final_test_loss, train_epochs: curves.epochs })
}

/// One classifier per (value, arch, seed), run on the rayon pool. Results
/// are ordered by value, arch, then seed regardless of scheduling.
pub fn run_sweep(cfg: &SweepConfig, root_seed: u64) -> Result<SweepTable, SupError> {
    cfg.validate()?;
    let tree = SeedTree::new(root_seed);
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.values.len())
        .flat_map(|vi| (0..cfg.archs.len()).flat_map(move |ai| (0..cfg.n_seeds).map(move |s| (vi, ai, s))))
        .collect();
    let rows = jobs.par_iter().map(|&(vi, ai, s)| run_job(cfg, &tree, vi, s, cfg.archs[ai])).collect::<Result<Vec<_>, _>>()?;
    let cells = rows
        .chunks(cfg.n_seeds)
        .map(|runs| {
            let ok: Vec<f64> = runs.iter().map(|r| r.final_test_loss).filter(|l| l.is_finite()).collect();
            let (mean, stderr) = mean_stderr(&ok);
            SweepCell { axis_value: runs[0].axis_value, arch: runs[0].arch, mean, stderr, n_runs: ok.len(), n_failed: runs.len() - ok.len() }
        })
        .collect();
    Ok(SweepTable { axis: cfg.axis, rows, cells })
}

/// Sample mean and standard error (n−1 denominator); NaN when undefined.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn write_sweep_csv<W: Write>(table: &SweepTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let axis = match table.axis {
        SweepAxis::OmegaF => "omega_f",
        SweepAxis::NTrain => "n_train",
    };
    w.write_record([axis, "arch", "seed", "final_test_loss", "train_epochs"])?;
    for r in &table.rows {
        w.write_record([r.axis_value.to_string(), r.arch.name().to_string(), r.seed.to_string(), r.final_test_loss.to_string(), r.train_epochs.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
