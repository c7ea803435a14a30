use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SynthDataset;
use crate::diffcore::{AdamConfig, AdamState, Graph, Var};
use crate::netblocks::{NetError, NoiseMode, SupervisedArch, SupervisedNet};
use crate::rng::{stream_from_seed, streams, SeedTree, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHp {
    #[serde(default = "hd::lr")]
    pub learning_rate: f64,
    #[serde(default = "hd::batch")]
    pub batch_size: usize,
    #[serde(default = "hd::max_epochs")]
    pub max_epochs: usize,
    /// Epochs without train-loss improvement, counted once the training set is fit.
    #[serde(default = "hd::patience")]
    pub patience: usize,
    #[serde(default = "hd::min_improve")]
    pub min_improvement: f64,
    /// Used by `wdecay` only.
    #[serde(default = "hd::wd")]
    pub weight_decay: f64,
    /// Used by `vib` only.
    #[serde(default = "hd::beta")]
    pub beta: f64,
    #[serde(default = "hd::divergence")]
    pub divergence_loss: f64,
    /// Evaluate the test split every this many epochs; 0 evaluates only at the end.
    #[serde(default)]
    pub test_eval_every: usize,
}

mod hd {
    pub fn lr() -> f64 {
        1e-4
    }
    pub fn batch() -> usize {
        64
    }
    pub fn max_epochs() -> usize {
        200
    }
    pub fn patience() -> usize {
        20
    }
    pub fn min_improve() -> f64 {
        1e-4
    }
    pub fn wd() -> f64 {
        1e-3
    }
    pub fn beta() -> f64 {
        1e-3
    }
    pub fn divergence() -> f64 {
        1e3
    }
}

impl Default for TrainHp {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            min_improvement: 1e-4,
            weight_decay: 1e-3,
            beta: 1e-3,
            divergence_loss: 1e3,
            test_eval_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub arch: Option<SupervisedArch>,
    /// Noise-free pass over the training split after each epoch.
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    /// `(epoch, loss)` for each test evaluation; epochs count from 1.
    pub test_loss: Vec<(usize, f64)>,
    pub epochs: usize,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub fit_epoch: Option<usize>,
    pub failed: bool,
}

const EVAL_CHUNK: usize = 500;

fn batch_input(g: &mut Graph, data: &SynthDataset, idx: &[usize]) -> Result<Var, NetError> {
    let mut x = Vec::with_capacity(idx.len() * data.d_x);
    for &i in idx {
        x.extend_from_slice(data.row(i));
    }
    Ok(g.constant(&[idx.len(), data.d_x], x)?)
}

/// Mean cross-entropy and accuracy of the noise-free pass.
pub fn evaluate(net: &SupervisedNet, data: &SynthDataset) -> Result<(f64, f64), NetError> {
    let mut nll = 0.0;
    let mut correct = 0usize;
    let mut unused = stream_from_seed(0);
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let mut g = Graph::inference();
        let x = batch_input(&mut g, data, idx)?;
        let out = net.forward(&mut g, x, NoiseMode::Suspended, &mut unused)?;
        let lp = g.log_softmax(out.logits)?;
        let k = data.n_classes;
        for (r, &i) in idx.iter().enumerate() {
            let row = &g.value(lp)[r * k..(r + 1) * k];
            nll -= row[data.labels[i]];
            let arg = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
            correct += usize::from(arg == data.labels[i]);
        }
    }
    let n = data.len().max(1) as f64;
    Ok((nll / n, correct as f64 / n))
}

/// Cross-entropy of the noisy pass, plus `beta` times the mean latent KL
/// when the network has a bottleneck.
pub fn training_loss(g: &mut Graph, net: &SupervisedNet, data: &SynthDataset, idx: &[usize], beta: f64, noise: &mut Stream) -> Result<Var, NetError> {
    let x = batch_input(g, data, idx)?;
    let out = net.forward(g, x, NoiseMode::Stochastic, noise)?;
    let lp = g.log_softmax(out.logits)?;
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let picked = g.gather_index(lp, &labels)?;
    let ce = g.mean(picked);
    let mut loss = g.neg(ce);
    if let (Some(latent), true) = (out.latent, beta != 0.0) {
        let kl = latent.kl_to_standard(g)?;
        let kl = g.mean(kl);
        let kl = g.scale(kl, beta);
        loss = g.add(loss, kl)?;
    }
    Ok(loss)
}

fn train_step(net: &mut SupervisedNet, opt: &mut AdamState, data: &SynthDataset, idx: &[usize], beta: f64, noise: &mut Stream) -> Result<f64, NetError> {
    let mut g = Graph::new();
    let loss = training_loss(&mut g, net, data, idx, beta, noise)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Ok(value);
    }
    net.store.zero_grad();
    g.backward(loss)?;
    g.accumulate_param_grads(&mut net.store);
    opt.step(&mut net.store);
    Ok(value)
}

/// Trains a fresh network of `arch` until it fits the training split and
/// the train loss stops improving, or until `max_epochs`.
pub fn train_classifier(arch: SupervisedArch, train: &SynthDataset, test: &SynthDataset, hp: &TrainHp, seed: u64) -> Result<(SupervisedNet, LossCurves), NetError> {
    let seeds = SeedTree::new(seed);
    let mut init = seeds.stream(streams::INIT, 0);
    let shape = crate::netblocks::SupervisedShape { d_x: train.d_x, n_classes: train.n_classes, ..Default::default() };
    let mut net = SupervisedNet::build_with_shape(arch, shape, &mut init);
    let mut cfg = AdamConfig::new(hp.learning_rate);
    if arch == SupervisedArch::WeightDecay {
        cfg = cfg.with_weight_decay(hp.weight_decay);
    }
    let beta = if arch == SupervisedArch::Vib { hp.beta } else { 0.0 };
    let mut opt = AdamState::new(cfg, &net.store);
    let mut shuffle = seeds.stream(streams::MINIBATCH, 0);
    let mut noise = seeds.stream(if arch == SupervisedArch::Vib { streams::LATENT_NOISE } else { streams::DROPOUT_NOISE }, 0);

    let mut curves = LossCurves { arch: Some(arch), ..Default::default() };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut shuffle);
        for idx in order.chunks(hp.batch_size.max(1)) {
            let l = train_step(&mut net, &mut opt, train, idx, beta, &mut noise)?;
            if !l.is_finite() || l > hp.divergence_loss {
                curves.failed = true;
                break;
            }
        }
        curves.epochs = epoch;
        if curves.failed {
            break;
        }
        let (loss, acc) = evaluate(&net, train)?;
        curves.train_loss.push(loss);
        curves.train_accuracy.push(acc);
        if !loss.is_finite() || loss > hp.divergence_loss {
            curves.failed = true;
            break;
        }
        if hp.test_eval_every > 0 && epoch % hp.test_eval_every == 0 {
            curves.test_loss.push((epoch, evaluate(&net, test)?.0));
        }
        if curves.fit_epoch.is_none() && acc >= 1.0 {
            curves.fit_epoch = Some(epoch);
            best = loss;
            continue;
        }
        if curves.fit_epoch.is_some() {
            if loss < best - hp.min_improvement {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= hp.patience {
                    break;
                }
            }
        }
    }
    if curves.failed {
        curves.final_test_loss = f64::NAN;
        curves.final_test_accuracy = f64::NAN;
    } else {
        let (l, a) = evaluate(&net, test)?;
        if curves.test_loss.last().map(|&(e, _)| e) != Some(curves.epochs) {
            curves.test_loss.push((curves.epochs, l));
        }
        curves.final_test_loss = l;
        curves.final_test_accuracy = a;
    }
    Ok((net, curves))
}
