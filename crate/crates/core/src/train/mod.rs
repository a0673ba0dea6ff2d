//! Training against a frozen classifier, evaluation grids, and ablations.

mod ablation;
mod eval;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ablation::{run_ablation, AblationReport, AblationRow, AblationSuite};
pub use eval::{evaluate, CellResult, Deltas, EvalOptions, EvalReport};

use crate::augment::{AugFamily, MagnitudeScale};
use crate::classifier::{classify_var, diverged, sum_grads, Adam, ClassifierParams, StepDecay};
use crate::corrupt::{scenario_batches, Dataset, Scenario};
use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::head::{forward_var, DynttaParams, Mode};

/// Everything that determines a training run.
///
/// Read from flat `key = value` text; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs between learning-rate halvings (0 keeps it constant).
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scenario: Scenario,
    pub scale: MagnitudeScale,
    pub mode: Mode,
    /// Must be 0: pruning only happens at inference.
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leave_out: Option<AugFamily>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            lr: 1e-3,
            lr_decay_every: 10,
            batch_size: 16,
            seed: 0,
            scenario: Scenario::NonBlind,
            scale: MagnitudeScale::Standard,
            mode: Mode::Full,
            threshold: 0.0,
            leave_out: None,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold != 0.0 {
            return Err(Error::invalid(
                "training threshold must be 0 (pruning is inference-only)",
            ));
        }
        if self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 || self.epochs == 0 {
            return Err(Error::invalid("epochs, batch size and learning rate must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: DynttaParams,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Mean loss of `classify(dyntta(x))` on a fixed set, without training.
pub fn dyntta_loss(classifier: &ClassifierParams, params: &DynttaParams, data: &Dataset) -> Result<f64> {
    let losses: Vec<f64> = data
        .images
        .par_iter()
        .zip(&data.labels)
        .map(|(img, &label)| {
            let mut g = Graph::<f32>::new();
            let b = params.bind(&mut g, false);
            let cb = classifier.bind(&mut g, false);
            let x = g.constant(img.clone());
            let y = forward_var(&mut g, x, params, &b, params.mode, None)?;
            let logits = classify_var(&mut g, y, &cb)?;
            let loss = g.cross_entropy(logits, label)?;
            Ok(g.value(loss).item() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Trains the enhancement model (backbone, head and enhancer jointly)
/// through the frozen classifier.
pub fn train_dyntta(classifier: &ClassifierParams, train: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !classifier.is_frozen() {
        return Err(Error::contract(
            "the classifier must be frozen before training the enhancement model",
        ));
    }
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let before = classifier.checksum();
    let mut params = DynttaParams::standard(cfg.seed, cfg.scale, cfg.mode, cfg.leave_out)?;
    let mut adam = Adam::new(&params.params);
    let schedule = StepDecay {
        every: cfg.lr_decay_every,
        ..StepDecay::halving(cfg.lr)
    };
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stream_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64);
        let mut total = 0.0;
        for batch in scenario_batches(cfg.scenario, train, cfg.batch_size, stream_seed)? {
            let batch = batch?;
            let parts: Vec<(f64, Vec<Vec<f32>>)> = batch
                .images
                .par_iter()
                .zip(&batch.labels)
                .map(|(img, &label)| {
                    let mut g = Graph::<f32>::new();
                    let b = params.bind(&mut g, true);
                    let cb = classifier.bind(&mut g, false);
                    let x = g.constant(img.clone());
                    let y = forward_var(&mut g, x, &params, &b, cfg.mode, None)?;
                    let logits = classify_var(&mut g, y, &cb)?;
                    let loss = g.cross_entropy(logits, label)?;
                    let l = g.value(loss).item() as f64;
                    g.backward(loss)?;
                    Ok((l, b.grads(&g)))
                })
                .collect::<Result<_>>()
                .map_err(|e| diverged(e, epoch))?;
            let n = parts.len() as f64;
            let (loss, mut grads) = sum_grads(parts);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    detail: format!("loss {loss} or a gradient is not finite"),
                });
            }
            grads.iter_mut().flatten().for_each(|g| *g /= n);
            adam.step(&mut params.params, &grads, schedule.at(epoch))?;
            total += loss;
        }
        epoch_loss.push(total / train.len() as f64);
        log::info!("epoch {epoch}: loss {:.4}", total / train.len() as f64);
    }
    if classifier.checksum() != before {
        return Err(Error::Integrity("classifier weights changed during training".into()));
    }
    Ok(TrainOutcome { params, epoch_loss })
}

#[cfg(test)]
mod tests;
