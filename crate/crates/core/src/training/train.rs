use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::Dataset;
use super::loss::{record_sample_loss, sample_loss, LossParts};
use super::optim::Adam;
use crate::cost::CostWeights;
use crate::error::{Result, SagaError};
use crate::fmt::sig9;
use crate::geometry::AnchorLattice;
use crate::net::{NetConfig, PlannerNet};
use crate::nn::{Gradients, Tape};

pub const LOSS_CURVE_HEADER: &str = "epoch,l_traj,l_score,l_total";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub ppe_enabled: bool,
    /// Speed limit the dataset was flown at.
    pub v_max: f64,
    pub net: NetConfig,
    pub weights: CostWeights,
    pub lattice: AnchorLattice,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            ppe_enabled: true,
            v_max: 2.0,
            net: NetConfig::standard(),
            weights: CostWeights::default(),
            lattice: AnchorLattice::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SagaError::config("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SagaError::config("learning rate must be finite and nonnegative"));
        }
        if !(self.v_max > 0.0) {
            return Err(SagaError::config("v_max must be positive"));
        }
        self.net.validate()?;
        self.weights.validate()
    }

    /// Lattice with terminal velocity scaled to the dataset's speed limit.
    pub fn effective_lattice(&self) -> Result<AnchorLattice> {
        let a = self.lattice.a_term_max;
        self.lattice.clone().with_terminal_scales(self.v_max, a)
    }
}

/// Mean losses of one epoch; epoch 0 is the untrained network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub l_traj: f64,
    pub l_score: f64,
    pub l_total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: PlannerNet,
    pub curve: Vec<LossRecord>,
    pub steps: u64,
}

pub fn loss_curve_csv(curve: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_CURVE_HEADER}\n");
    for r in curve {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, sig9(r.l_traj), sig9(r.l_score), sig9(r.l_total));
    }
    out
}

fn mean_record(epoch: usize, parts: &[LossParts]) -> LossRecord {
    let n = parts.len().max(1) as f64;
    LossRecord {
        epoch,
        l_traj: parts.iter().map(|p| p.l_traj).sum::<f64>() / n,
        l_score: parts.iter().map(|p| p.l_score).sum::<f64>() / n,
        l_total: parts.iter().map(|p| p.total).sum::<f64>() / n,
    }
}

/// Mean loss of `net` over the whole dataset, without updates.
pub fn dataset_loss(net: &PlannerNet, data: &Dataset, config: &TrainConfig, epoch: usize) -> Result<LossRecord> {
    let lattice = config.effective_lattice()?;
    let parts: Vec<LossParts> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let input = data.input(i, config.v_max)?;
            let ctx = data.context(i, &lattice, &config.weights, config.v_max);
            sample_loss(net, &input, &ctx, config.ppe_enabled)
        })
        .collect::<Result<_>>()?;
    Ok(mean_record(epoch, &parts))
}

fn at_batch(b: usize, e: SagaError) -> SagaError {
    match e {
        SagaError::NonFinite(m) => SagaError::NonFinite(format!("batch {b}: {m}")),
        other => other,
    }
}

/// Minibatch Adam on the training loss starting from `net`.
///
/// Per-sample passes run in parallel; gradients are summed in sample order so
/// results do not depend on the thread count. With `checkpoint_dir` the
/// weights are saved after every epoch as `epoch_NNN.sagw`.
pub fn train(data: &Dataset, config: &TrainConfig, mut net: PlannerNet, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(SagaError::config("training needs a nonempty dataset"));
    }
    let lattice = config.effective_lattice()?;
    let mut adam = Adam::new(&net.params, config.learning_rate, config.beta1, config.beta2, config.epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = vec![dataset_loss(&net, data, config, 0)?];
    log::info!("epoch 0 loss {}", sig9(curve[0].l_total));
    let mut batch_index = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut parts = Vec::with_capacity(data.len());
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(LossParts, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let input = data.input(i, config.v_max)?;
                    let ctx = data.context(i, &lattice, &config.weights, config.v_max);
                    let mut tape = Tape::new(&net.params);
                    let s = record_sample_loss(&mut tape, &net, &input, &ctx, config.ppe_enabled, None)?;
                    Ok((s.parts, tape.backward(s.loss)?))
                })
                .collect();
            let mut grads = Gradients::default();
            for r in results {
                let (p, g) = r.map_err(|e| at_batch(batch_index, e))?;
                if !p.total.is_finite() {
                    return Err(SagaError::NonFinite(format!("batch {batch_index}: loss")));
                }
                grads.merge(&g);
                parts.push(p);
            }
            adam.step(&mut net.params, &grads, 1.0 / batch.len() as f64);
            batch_index += 1;
        }
        let rec = mean_record(epoch, &parts);
        log::info!(
            "epoch {epoch} l_traj {} l_score {} total {}",
            sig9(rec.l_traj),
            sig9(rec.l_score),
            sig9(rec.l_total)
        );
        curve.push(rec);
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| SagaError::io(dir, e))?;
            net.save(&dir.join(format!("epoch_{epoch:03}.sagw")))?;
        }
    }
    Ok(TrainOutcome {
        net,
        curve,
        steps: adam.steps(),
    })
}
