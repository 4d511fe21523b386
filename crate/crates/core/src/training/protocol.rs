use serde::{Deserialize, Serialize};

use super::{
    evaluate_accuracy, split_dataset, split_train_val, train, TrainConfig, DEFAULT_THRESHOLD,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, fmt_mean_std, CsvTable};
use crate::model::{EmotionLabel, EmotionModel, ModelConfig};
use crate::par;

pub const DEFAULT_REPORT_SEEDS: usize = 10;
pub const DEFAULT_GRID_SEEDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Test accuracies over independent seeds. `mean` and `std` (population)
/// are derived from `accuracies` and can be recomputed at any time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub best_epochs: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    #[serde(default)]
    pub failures: Vec<SeedFailure>,
}

impl RunResult {
    pub fn new(
        seeds: Vec<u64>,
        accuracies: Vec<f64>,
        best_epochs: Vec<usize>,
        failures: Vec<SeedFailure>,
    ) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            seeds,
            accuracies,
            best_epochs,
            mean,
            std,
            failures,
        }
    }

    pub fn from_accuracies(accuracies: &[f64]) -> Self {
        let n = accuracies.len();
        Self::new(
            (0..n as u64).collect(),
            accuracies.to_vec(),
            vec![0; n],
            Vec::new(),
        )
    }

    pub fn succeeded(&self) -> bool {
        !self.accuracies.is_empty()
    }

    /// `"0.974±0.020"`, or `"failed"` when no seed finished.
    pub fn cell(&self) -> String {
        if self.succeeded() {
            fmt_mean_std(self.mean, self.std)
        } else {
            "failed".to_string()
        }
    }
}

/// Mean and population standard deviation; `NaN` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains `n_seeds` fresh models, each on its own stratified split, and
/// reports test accuracy. Seed `i` is `config.seed + i` and drives both the
/// split and the initialization. Failed seeds are recorded and skipped.
pub fn multi_seed_eval(
    template: &ModelConfig,
    target: EmotionLabel,
    ds: &Dataset,
    config: &TrainConfig,
    n_seeds: usize,
) -> Result<RunResult> {
    if n_seeds == 0 {
        return Err(Error::Argument(
            "multi_seed_eval needs at least one seed".into(),
        ));
    }
    template.validate()?;
    config.validate()?;
    let runs = par::map_range(n_seeds, |i| {
        let seed = config.seed + i as u64;
        let split = split_dataset(ds, target, seed, config.val_fraction, config.test_fraction)?;
        let model = EmotionModel::build(template.clone(), target, seed)?;
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let out = train(
            model,
            &ds.select(&split.train),
            &ds.select(&split.val),
            &cfg,
        )?;
        let acc = evaluate_accuracy(&out.model, &ds.select(&split.test), DEFAULT_THRESHOLD)?;
        Ok::<_, Error>((seed, acc, out.history.best_epoch))
    });
    let (mut seeds, mut accs, mut epochs, mut failures) = (vec![], vec![], vec![], vec![]);
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok((seed, acc, epoch)) => {
                seeds.push(seed);
                accs.push(acc);
                epochs.push(epoch);
            }
            Err(e @ Error::Stratification(_)) => return Err(e),
            Err(e) => {
                let seed = config.seed + i as u64;
                log::warn!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(RunResult::new(seeds, accs, epochs, failures))
}

/// Candidate values for the three searched hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub conv_filters: Vec<usize>,
    pub lstm_units: Vec<usize>,
    pub fc1_neurons: Vec<usize>,
}

impl Default for GridSpec {
    /// Spans the value ranges reported for the published networks.
    fn default() -> Self {
        Self {
            conv_filters: vec![16, 25, 33, 42, 50],
            lstm_units: vec![30, 40, 49, 58, 68],
            fc1_neurons: vec![33, 43, 54, 64, 74],
        }
    }
}

impl GridSpec {
    pub fn singleton(f: usize, q: usize, r: usize) -> Self {
        Self {
            conv_filters: vec![f],
            lstm_units: vec![q],
            fc1_neurons: vec![r],
        }
    }

    /// `{0.8v, v, 1.2v}` (rounded, deduplicated) around each value.
    pub fn around(f: usize, q: usize, r: usize) -> Self {
        let spread = |v: usize| {
            let mut out: Vec<usize> = [0.8, 1.0, 1.2]
                .iter()
                .map(|s| ((v as f64 * s).round() as usize).max(1))
                .collect();
            out.dedup();
            out
        };
        Self {
            conv_filters: spread(f),
            lstm_units: spread(q),
            fc1_neurons: spread(r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_filters.is_empty() || self.lstm_units.is_empty() || self.fc1_neurons.is_empty()
        {
            return Err(Error::Config("grid lists must be non-empty".into()));
        }
        Ok(())
    }

    /// Cartesian product in `F`, then `Q`, then `R` order.
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &f in &self.conv_filters {
            for &q in &self.lstm_units {
                for &r in &self.fc1_neurons {
                    out.push((f, q, r));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    pub grid_index: usize,
    pub config: ModelConfig,
    pub trainable_params: usize,
    pub val_accs: Vec<f64>,
    /// `NaN` when every seed failed.
    pub mean_val_acc: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best: ModelConfig,
    /// Ranked best first.
    pub leaderboard: Vec<LeaderboardEntry>,
}

impl CsvTable for GridResult {
    fn header(&self) -> Vec<String> {
        [
            "rank",
            "conv_filters",
            "lstm_units",
            "fc1_neurons",
            "trainable_params",
            "mean_val_acc",
            "seed_val_accs",
            "failures",
        ]
        .map(String::from)
        .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.leaderboard
            .iter()
            .enumerate()
            .map(|(rank, e)| {
                vec![
                    (rank + 1).to_string(),
                    e.config.conv_filters.to_string(),
                    e.config.lstm_units.to_string(),
                    e.config.fc1_neurons.to_string(),
                    e.trainable_params.to_string(),
                    fmt_f64(e.mean_val_acc),
                    e.val_accs
                        .iter()
                        .map(|v| fmt_f64(*v))
                        .collect::<Vec<_>>()
                        .join(";"),
                    e.failures.to_string(),
                ]
            })
            .collect()
    }
}

/// Exhaustive search over `grid` by mean best-validation accuracy across
/// `n_seeds` train/validation splits of `pool`. Ties go to the smaller
/// network, then to the earlier grid cell.
pub fn grid_search(
    grid: &GridSpec,
    template: &ModelConfig,
    target: EmotionLabel,
    pool: &Dataset,
    config: &TrainConfig,
    n_seeds: usize,
) -> Result<GridResult> {
    grid.validate()?;
    config.validate()?;
    if n_seeds == 0 {
        return Err(Error::Argument(
            "grid search needs at least one seed".into(),
        ));
    }
    let cells: Vec<ModelConfig> = grid
        .cells()
        .into_iter()
        .map(|(f, q, r)| ModelConfig {
            conv_filters: f,
            lstm_units: q,
            fc1_neurons: r,
            ..template.clone()
        })
        .collect();
    for c in &cells {
        c.validate()?;
    }
    let splits = (0..n_seeds)
        .map(|s| split_train_val(pool, target, config.seed + s as u64, config.val_fraction))
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<(Dataset, Dataset)> = splits
        .iter()
        .map(|s| (pool.select(&s.train), pool.select(&s.val)))
        .collect();

    let jobs = par::map_range(cells.len() * n_seeds, |j| {
        let (cell, s) = (j / n_seeds, j % n_seeds);
        let seed = config.seed + s as u64;
        let model = EmotionModel::build(cells[cell].clone(), target, seed)?;
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let (tr, va) = &sets[s];
        Ok::<_, Error>(train(model, tr, va, &cfg)?.history.best_val_acc)
    });

    let mut board: Vec<LeaderboardEntry> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let results = &jobs[i * n_seeds..(i + 1) * n_seeds];
            let val_accs: Vec<f64> = results
                .iter()
                .filter_map(|r| r.as_ref().ok().copied())
                .collect();
            for e in results.iter().filter_map(|r| r.as_ref().err()) {
                log::warn!("grid cell {i} failed: {e}");
            }
            LeaderboardEntry {
                grid_index: i,
                config: c.clone(),
                trainable_params: c.parameter_count().0,
                mean_val_acc: mean_std(&val_accs).0,
                failures: n_seeds - val_accs.len(),
                val_accs,
            }
        })
        .collect();
    if board.iter().all(|e| e.val_accs.is_empty()) {
        return Err(Error::TrainingFailure {
            epoch: 0,
            reason: "every grid cell failed".into(),
        });
    }
    board.sort_by(|a, b| {
        let key = |e: &LeaderboardEntry| {
            if e.mean_val_acc.is_nan() {
                f64::NEG_INFINITY
            } else {
                e.mean_val_acc
            }
        };
        key(b)
            .total_cmp(&key(a))
            .then(a.trainable_params.cmp(&b.trainable_params))
            .then(a.grid_index.cmp(&b.grid_index))
    });
    Ok(GridResult {
        best: board[0].config.clone(),
        leaderboard: board,
    })
}
