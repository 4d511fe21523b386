#![allow(dead_code)]

use std::collections::BTreeMap;

use emo_ig::data::{generate_synthetic, Dataset, SyntheticSpec};
use emo_ig::model::{EmotionLabel, EmotionModel, ModelConfig};
use emo_ig::selection::{select_typical_baselines, BaselineSet};
use emo_ig::training::{split_dataset, train, TrainConfig, TrainOutcome};

pub const TARGET: EmotionLabel = EmotionLabel::Happiness;

/// 64 landmarks over 8 frames, landmarks `3, 11, …, 59` informative.
pub fn planted_spec(seed: u64, sigma: f64) -> SyntheticSpec {
    SyntheticSpec {
        landmarks: 64,
        frames: 8,
        samples_per_class: 120,
        informative: (0..8).map(|i| i * 8 + 3).collect(),
        amplitude: 0.1,
        noise_sigma: sigma,
        seed,
        target: TARGET,
    }
}

pub fn planted_model(landmarks: usize, frames: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(8, 16, 16, landmarks, frames);
    cfg.bn_momentum = 0.9;
    cfg
}

pub fn planted_train(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        epochs: 10,
        seed,
        ..TrainConfig::default()
    }
}

pub struct Planted {
    pub spec: SyntheticSpec,
    pub dataset: Dataset,
    pub pool: Dataset,
    pub outcome: TrainOutcome,
}

/// Generates the planted data for `seed` and trains the target classifier
/// on the training part of the seed's split.
pub fn train_planted(seed: u64, sigma: f64) -> Planted {
    let spec = planted_spec(seed, sigma);
    let dataset = generate_synthetic(&spec).unwrap().dataset;
    let tc = planted_train(seed);
    let split = split_dataset(&dataset, TARGET, seed, tc.val_fraction, tc.test_fraction).unwrap();
    let model = EmotionModel::build(planted_model(64, 8), TARGET, seed).unwrap();
    let outcome = train(
        model,
        &dataset.select(&split.train),
        &dataset.select(&split.val),
        &tc,
    )
    .unwrap();
    let mut pool: Vec<usize> = split.train.iter().chain(&split.val).copied().collect();
    pool.sort_unstable();
    Planted {
        pool: dataset.select(&pool),
        spec,
        dataset,
        outcome,
    }
}

/// The lowest-id sample of each emotion present.
pub fn first_of_each(ds: &Dataset) -> BaselineSet {
    let mut overrides = BTreeMap::new();
    for s in &ds.samples {
        overrides.entry(s.label).or_insert(s.id);
    }
    select_typical_baselines(ds, &BTreeMap::new(), &overrides).unwrap()
}
