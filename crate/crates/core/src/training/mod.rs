//! Optimization, dataset splits and the multi-seed evaluation protocol.

mod adam;
mod protocol;
mod split;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_loss, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, CsvTable};
use crate::model::EmotionModel;
use crate::tensor::Tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use protocol::{
    grid_search, multi_seed_eval, GridResult, GridSpec, LeaderboardEntry, RunResult, SeedFailure,
    DEFAULT_GRID_SEEDS, DEFAULT_REPORT_SEEDS,
};
pub use split::{split_dataset, split_train_val, DataSplit};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Reweights the BCE terms so both classes carry equal total weight.
    pub class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            val_fraction: 0.10,
            test_fraction: 0.15,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            class_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be ≥ 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Inference-mode BCE over the training set after the epoch.
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub initial_train_loss: f64,
    pub initial_val_acc: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl TrainHistory {
    /// Train loss after `epoch` epochs; epoch 0 is the untrained model.
    pub fn loss_at(&self, epoch: usize) -> Option<f64> {
        if epoch == 0 {
            Some(self.initial_train_loss)
        } else {
            self.epochs.get(epoch - 1).map(|r| r.train_loss)
        }
    }
}

impl CsvTable for TrainHistory {
    fn header(&self) -> Vec<String> {
        ["seed", "epoch", "train_loss", "val_acc", "best"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let row = |epoch: usize, loss: f64, acc: f64| {
            vec![
                self.seed.to_string(),
                epoch.to_string(),
                fmt_f64(loss),
                fmt_f64(acc),
                u8::from(epoch == self.best_epoch).to_string(),
            ]
        };
        std::iter::once(row(0, self.initial_train_loss, self.initial_val_acc))
            .chain(
                self.epochs
                    .iter()
                    .map(|r| row(r.epoch, r.train_loss, r.val_acc)),
            )
            .collect()
    }
}

/// Fraction of samples whose positive-class probability clears `threshold`
/// (`≥`) in agreement with the binary label.
pub fn evaluate_accuracy(model: &EmotionModel, ds: &Dataset, threshold: f64) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Argument(
            "cannot evaluate accuracy on an empty dataset".into(),
        ));
    }
    let probs = model.predict_batch(&ds.tensors())?;
    Ok(accuracy_from(
        &probs,
        &ds.binary_labels(model.target),
        threshold,
    ))
}

pub fn accuracy_from(probs: &[f64], labels: &[f64], threshold: f64) -> f64 {
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p >= threshold) == (**y >= 0.5))
        .count();
    correct as f64 / probs.len() as f64
}

/// Inference-mode mean BCE.
pub fn evaluate_loss(model: &EmotionModel, ds: &Dataset) -> Result<f64> {
    let probs = model.predict_batch(&ds.tensors())?;
    bce_loss(&probs, &ds.binary_labels(model.target))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmotionModel,
    pub history: TrainHistory,
}

fn sample_weights(labels: &[f64], enabled: bool) -> Option<Vec<f64>> {
    if !enabled {
        return None;
    }
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|y| **y >= 0.5).count() as f64;
    let neg = n - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    Some(
        labels
            .iter()
            .map(|y| {
                if *y >= 0.5 {
                    n / (2.0 * pos)
                } else {
                    n / (2.0 * neg)
                }
            })
            .collect(),
    )
}

/// One mini-batch: forward in training mode, BCE, backward and an Adam step.
/// Returns the batch loss.
pub fn train_step(
    model: &mut EmotionModel,
    inputs: &[&Tensor],
    targets: &[f64],
    weights: Option<&[f64]>,
    adam: &mut AdamState,
    config: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batch = model.stack(inputs)?;
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape, true);
    let input = tape.constant(batch);
    let mut bn = model.bn_state.clone();
    let out = model.forward_graph(&mut tape, &params, input, &mut bn, true, rng)?;
    let loss = tape.bce_loss(out.probs, targets, weights)?;
    let value = tape.value(loss).values()[0];
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite batch loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let mut by_name = BTreeMap::new();
    for (name, var) in params.iter() {
        if tape.requires_grad(var) {
            by_name.insert(name.to_string(), grads.wrt(var, &tape)?);
        }
    }
    adam_step(&mut model.params, &by_name, adam, config)?;
    model.bn_state = bn;
    Ok(value)
}

/// Mini-batch Adam on BCE. After every epoch the training loss and validation
/// accuracy are recorded; the model from the best validation epoch (earliest
/// on ties) is returned.
pub fn train(
    model: EmotionModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for ds in [train_set, val_set] {
        if ds.frames != model.config.num_frames || ds.landmarks != model.config.num_landmarks {
            return Err(Error::shape(
                "dataset vs model (P, L)",
                &[model.config.num_frames, model.config.num_landmarks],
                &[ds.frames, ds.landmarks],
            ));
        }
    }
    let mut model = model;
    let at_start = |e: Error| Error::TrainingFailure {
        epoch: 0,
        reason: e.to_string(),
    };
    let initial_train_loss = evaluate_loss(&model, train_set).map_err(at_start)?;
    let initial_val_acc =
        evaluate_accuracy(&model, val_set, DEFAULT_THRESHOLD).map_err(at_start)?;
    let mut history = TrainHistory {
        seed: config.seed,
        initial_train_loss,
        initial_val_acc,
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_val_acc: initial_val_acc,
    };
    if config.epochs == 0 {
        return Ok(TrainOutcome { model, history });
    }

    let labels = train_set.binary_labels(model.target);
    let weights = sample_weights(&labels, config.class_weights);
    let adam_cfg = config.adam();
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<EmotionModel> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<&Tensor> = batch
                .iter()
                .map(|&i| &train_set.samples[i].frames)
                .collect();
            let targets: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
            let w: Option<Vec<f64>> = weights
                .as_ref()
                .map(|w| batch.iter().map(|&i| w[i]).collect());
            train_step(
                &mut model,
                &inputs,
                &targets,
                w.as_deref(),
                &mut adam,
                &adam_cfg,
                &mut rng,
            )
            .map_err(|e| Error::TrainingFailure {
                epoch,
                reason: e.to_string(),
            })?;
        }
        let train_loss = evaluate_loss(&model, train_set).map_err(|e| Error::TrainingFailure {
            epoch,
            reason: e.to_string(),
        })?;
        if !train_loss.is_finite() {
            return Err(Error::TrainingFailure {
                epoch,
                reason: format!("training loss is {train_loss}"),
            });
        }
        let val_acc = evaluate_accuracy(&model, val_set, DEFAULT_THRESHOLD)?;
        log::debug!(
            "seed {} epoch {epoch}: loss {train_loss:.5} val_acc {val_acc:.4}",
            config.seed
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
        });
        if best.is_none() || val_acc > history.best_val_acc {
            history.best_epoch = epoch;
            history.best_val_acc = val_acc;
            best = Some(model.clone());
        }
    }
    Ok(TrainOutcome {
        model: best.expect("at least one epoch ran"),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::model::{EmotionLabel, ModelConfig};

    fn planted(sigma: f64, seed: u64) -> Dataset {
        let spec = SyntheticSpec {
            landmarks: 8,
            frames: 3,
            samples_per_class: 24,
            informative: vec![1, 4],
            amplitude: 0.15,
            noise_sigma: sigma,
            seed,
            target: EmotionLabel::Happiness,
        };
        generate_synthetic(&spec).unwrap().dataset
    }

    fn small_model(seed: u64) -> EmotionModel {
        EmotionModel::build(
            ModelConfig::new(3, 6, 6, 8, 3),
            EmotionLabel::Happiness,
            seed,
        )
        .unwrap()
    }

    fn fast_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_input_model() {
        let ds = planted(0.0, 1);
        let split = split_train_val(&ds, EmotionLabel::Happiness, 0, 0.1).unwrap();
        let m = small_model(3);
        let out = train(
            m.clone(),
            &ds.select(&split.train),
            &ds.select(&split.val),
            &fast_config(0),
        )
        .unwrap();
        assert_eq!(out.model, m);
        assert!(out.history.epochs.is_empty());
    }

    #[test]
    fn bookkeeping_and_restore() {
        let ds = planted(0.0, 2);
        let split = split_train_val(&ds, EmotionLabel::Happiness, 5, 0.25).unwrap();
        let (tr, va) = (ds.select(&split.train), ds.select(&split.val));
        let out = train(small_model(5), &tr, &va, &fast_config(6)).unwrap();
        let h = &out.history;
        assert_eq!(h.epochs.len(), 6);
        let max = h.epochs.iter().map(|r| r.val_acc).fold(f64::MIN, f64::max);
        assert_eq!(h.best_val_acc, max);
        let first = h.epochs.iter().find(|r| r.val_acc == max).unwrap().epoch;
        assert_eq!(h.best_epoch, first);
        assert_eq!(
            evaluate_accuracy(&out.model, &va, 0.5).unwrap(),
            h.best_val_acc
        );
        assert_eq!(h.rows().len(), 7);
    }

    #[test]
    fn seed_determinism() {
        let ds = planted(0.02, 3);
        let split = split_train_val(&ds, EmotionLabel::Happiness, 1, 0.2).unwrap();
        let (tr, va) = (ds.select(&split.train), ds.select(&split.val));
        let a = train(small_model(9), &tr, &va, &fast_config(3)).unwrap();
        let b = train(small_model(9), &tr, &va, &fast_config(3)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn frozen_conv_stays_put() {
        let ds = planted(0.0, 4);
        let split = split_train_val(&ds, EmotionLabel::Happiness, 2, 0.2).unwrap();
        let mut m = small_model(1);
        m.config.randomized_conv = true;
        let m = EmotionModel::build(m.config.clone(), m.target, 1).unwrap();
        let out = train(
            m.clone(),
            &ds.select(&split.train),
            &ds.select(&split.val),
            &fast_config(2),
        )
        .unwrap();
        for name in [
            crate::model::names::CONV_KERNEL,
            crate::model::names::CONV_BIAS,
        ] {
            assert_eq!(
                out.model.params.tensor(name).unwrap(),
                m.params.tensor(name).unwrap()
            );
        }
        assert_ne!(out.model.params, m.params);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let ds = planted(0.0, 5);
        let split = split_train_val(&ds, EmotionLabel::Happiness, 2, 0.2).unwrap();
        let mut model = small_model(1);
        model
            .params
            .tensor_mut(crate::model::names::FC2_BIAS)
            .unwrap()
            .values_mut()[0] = f64::NAN;
        let err = train(
            model,
            &ds.select(&split.train),
            &ds.select(&split.val),
            &fast_config(3),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::TrainingFailure { epoch: 0, .. }),
            "{err}"
        );
    }

    #[test]
    fn accuracy_tie_rule() {
        assert_eq!(
            accuracy_from(&[0.5, 0.5, 0.5, 0.5], &[1.0, 0.0, 1.0, 1.0], 0.5),
            0.75
        );
        assert_eq!(accuracy_from(&[0.9, 0.1], &[1.0, 0.0], 0.5), 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.val_fraction = 1.0;
        assert!(c.validate().is_err());
    }
}
