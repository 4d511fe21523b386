use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    global_attribution, rank_landmarks, subset_dataset, BaselineSet, GlobalAttribution,
    GlobalConfig, LandmarkRanking,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, CsvTable};
use crate::model::{EmotionLabel, EmotionModel, ModelConfig};
use crate::par;
use crate::reference::{temo_hyperparameters, LANDMARK_LADDER};
use crate::training::{
    grid_search, multi_seed_eval, split_dataset, GridResult, GridSpec, RunResult, TrainConfig,
    DEFAULT_GRID_SEEDS, DEFAULT_REPORT_SEEDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Strictly decreasing subset sizes.
    pub ladder: Vec<usize>,
    /// Grid per subset size; sizes without an entry use `default_grid`, and
    /// failing that the neighborhood of the published hyperparameters.
    pub grids: BTreeMap<usize, GridSpec>,
    pub default_grid: Option<GridSpec>,
    pub grid_seeds: usize,
    pub report_seeds: usize,
    pub train: TrainConfig,
    pub global: GlobalConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            ladder: LANDMARK_LADDER.to_vec(),
            grids: BTreeMap::new(),
            default_grid: None,
            grid_seeds: DEFAULT_GRID_SEEDS,
            report_seeds: DEFAULT_REPORT_SEEDS,
            train: TrainConfig::default(),
            global: GlobalConfig::default(),
        }
    }
}

impl SelectionConfig {
    fn grid_for(&self, emotion: EmotionLabel, k: usize) -> Result<GridSpec> {
        if let Some(g) = self.grids.get(&k).or(self.default_grid.as_ref()) {
            return Ok(g.clone());
        }
        temo_hyperparameters(emotion, k)
            .map(|(f, q, r)| GridSpec::around(f, q, r))
            .ok_or_else(|| Error::Config(format!("no grid configured for k = {k}")))
    }
}

/// One ladder entry of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub k: usize,
    pub config: Option<ModelConfig>,
    pub result: Option<RunResult>,
    pub grid: Option<GridResult>,
    pub error: Option<String>,
}

impl SelectionRow {
    fn failed(k: usize, e: &Error) -> Self {
        log::warn!("selection row k = {k} failed: {e}");
        Self {
            k,
            config: None,
            result: None,
            grid: None,
            error: Some(e.to_string()),
        }
    }

    pub fn cell(&self) -> String {
        self.result
            .as_ref()
            .map_or_else(|| "failed".to_string(), RunResult::cell)
    }

    pub fn mean(&self) -> Option<f64> {
        self.result
            .as_ref()
            .filter(|r| r.succeeded())
            .map(|r| r.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub emotion: EmotionLabel,
    pub full_landmarks: usize,
    pub global: GlobalAttribution,
    pub ranking: LandmarkRanking,
    pub full: SelectionRow,
    /// In ladder order.
    pub rows: Vec<SelectionRow>,
}

impl SelectionReport {
    pub fn row(&self, k: usize) -> Option<&SelectionRow> {
        if k == self.full_landmarks {
            return Some(&self.full);
        }
        self.rows.iter().find(|r| r.k == k)
    }
}

fn validate_ladder(ladder: &[usize], l: usize) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Config("the landmark ladder is empty".into()));
    }
    if ladder.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Config(format!(
            "ladder {ladder:?} is not strictly decreasing"
        )));
    }
    if let Some(bad) = ladder.iter().find(|&&k| k == 0 || k > l) {
        return Err(Error::Config(format!("ladder entry {bad} outside 1..={l}")));
    }
    Ok(())
}

/// Ranks landmarks with `full_model` over the training portion of `ds`, then
/// for each ladder size retrains on the top-`k` subset (grid search followed
/// by the multi-seed protocol). The full-`L` network's own multi-seed result
/// is reported alongside. Failed rows are recorded and the rest continue.
pub fn selection_pipeline(
    emotion: EmotionLabel,
    ds: &Dataset,
    full_model: &EmotionModel,
    baselines: &BaselineSet,
    config: &SelectionConfig,
) -> Result<SelectionReport> {
    let l = ds.landmarks;
    validate_ladder(&config.ladder, l)?;
    if full_model.config.num_landmarks != l || full_model.target != emotion {
        return Err(Error::Argument(format!(
            "full model is a {}-landmark {} classifier, need {l} landmarks for {emotion}",
            full_model.config.num_landmarks, full_model.target
        )));
    }
    let t = &config.train;
    let base = split_dataset(ds, emotion, t.seed, t.val_fraction, t.test_fraction)?;
    let mut pool_idx: Vec<usize> = base.train.iter().chain(&base.val).copied().collect();
    pool_idx.sort_unstable();
    let pool = ds.select(&pool_idx);

    let global = global_attribution(emotion, full_model, &pool, baselines, &config.global)?;
    let ranking = rank_landmarks(&global);
    log::info!("{emotion}: top landmarks {:?}", ranking.top(16));

    let full = match multi_seed_eval(&full_model.config, emotion, ds, t, config.report_seeds) {
        Ok(r) => SelectionRow {
            k: l,
            config: Some(full_model.config.clone()),
            result: Some(r),
            grid: None,
            error: None,
        },
        Err(e) => SelectionRow::failed(l, &e),
    };

    let reduced: Vec<usize> = config.ladder.iter().copied().filter(|&k| k != l).collect();
    let computed = par::map(&reduced, |&k| {
        let run = || -> Result<SelectionRow> {
            let subset = subset_dataset(ds, &ranking, k)?;
            let template = ModelConfig {
                num_landmarks: k,
                ..full_model.config.clone()
            };
            let grid = config.grid_for(emotion, k)?;
            let gs = grid_search(
                &grid,
                &template,
                emotion,
                &subset.dataset.select(&pool_idx),
                t,
                config.grid_seeds,
            )?;
            let result =
                multi_seed_eval(&gs.best, emotion, &subset.dataset, t, config.report_seeds)?;
            Ok(SelectionRow {
                k,
                config: Some(gs.best.clone()),
                result: Some(result),
                grid: Some(gs),
                error: None,
            })
        };
        run().unwrap_or_else(|e| SelectionRow::failed(k, &e))
    });
    let mut computed = computed.into_iter();
    let rows = config
        .ladder
        .iter()
        .map(|&k| {
            if k == l {
                full.clone()
            } else {
                computed.next().expect("one row per reduced size")
            }
        })
        .collect();

    Ok(SelectionReport {
        emotion,
        full_landmarks: l,
        global,
        ranking,
        full,
        rows,
    })
}

/// One line per emotion: `emotion,468,234,…` with `mean±std` cells.
#[derive(Debug, Clone, Copy)]
pub struct ReportTable<'a> {
    pub reports: &'a [SelectionReport],
}

impl ReportTable<'_> {
    fn columns(&self) -> Vec<usize> {
        let Some(first) = self.reports.first() else {
            return Vec::new();
        };
        std::iter::once(first.full_landmarks)
            .chain(
                first
                    .rows
                    .iter()
                    .map(|r| r.k)
                    .filter(|&k| k != first.full_landmarks),
            )
            .collect()
    }

    /// Long-form companion with every per-row number.
    pub fn detail(&self) -> ReportDetail<'_> {
        ReportDetail {
            reports: self.reports,
        }
    }
}

impl CsvTable for ReportTable<'_> {
    fn header(&self) -> Vec<String> {
        std::iter::once("emotion".to_string())
            .chain(self.columns().iter().map(|k| k.to_string()))
            .collect()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let cols = self.columns();
        self.reports
            .iter()
            .map(|r| {
                std::iter::once(r.emotion.to_string())
                    .chain(cols.iter().map(|&k| {
                        r.row(k)
                            .map_or_else(|| "n/a".to_string(), SelectionRow::cell)
                    }))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReportDetail<'a> {
    reports: &'a [SelectionReport],
}

impl CsvTable for ReportDetail<'_> {
    fn header(&self) -> Vec<String> {
        [
            "emotion",
            "k",
            "conv_filters",
            "lstm_units",
            "fc1_neurons",
            "trainable_params",
            "mean",
            "std",
            "seeds_ok",
            "seeds_failed",
            "accuracies",
            "error",
        ]
        .map(String::from)
        .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for rep in self.reports {
            let mut rows = vec![&rep.full];
            rows.extend(rep.rows.iter().filter(|r| r.k != rep.full_landmarks));
            for row in rows {
                let cfg = row.config.as_ref();
                let res = row.result.as_ref();
                let opt = |v: Option<String>| v.unwrap_or_default();
                out.push(vec![
                    rep.emotion.to_string(),
                    row.k.to_string(),
                    opt(cfg.map(|c| c.conv_filters.to_string())),
                    opt(cfg.map(|c| c.lstm_units.to_string())),
                    opt(cfg.map(|c| c.fc1_neurons.to_string())),
                    opt(cfg.map(|c| c.parameter_count().0.to_string())),
                    opt(res.map(|r| fmt_f64(r.mean))),
                    opt(res.map(|r| fmt_f64(r.std))),
                    opt(res.map(|r| r.accuracies.len().to_string())),
                    opt(res.map(|r| r.failures.len().to_string())),
                    opt(res.map(|r| {
                        r.accuracies
                            .iter()
                            .map(|a| fmt_f64(*a))
                            .collect::<Vec<_>>()
                            .join(";")
                    })),
                    opt(row.error.clone()),
                ]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_checks() {
        assert!(validate_ladder(&[234, 128, 64, 32, 16], 468).is_ok());
        assert!(validate_ladder(&[16, 32], 468).is_err());
        assert!(validate_ladder(&[500], 468).is_err());
        assert!(validate_ladder(&[], 468).is_err());
    }

    #[test]
    fn grid_resolution() {
        let mut c = SelectionConfig::default();
        let g = c.grid_for(EmotionLabel::Fear, 128).unwrap();
        assert!(
            g.conv_filters.contains(&39)
                && g.lstm_units.contains(&51)
                && g.fc1_neurons.contains(&34)
        );
        assert!(c.grid_for(EmotionLabel::Fear, 100).is_err());
        c.default_grid = Some(GridSpec::singleton(2, 3, 4));
        assert_eq!(
            c.grid_for(EmotionLabel::Fear, 100).unwrap(),
            GridSpec::singleton(2, 3, 4)
        );
    }
}
