//! Dataset-wide attribution, landmark ranking and subset retraining.

mod pipeline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attribution::{attribution_mask, integrated_gradients, AttributionMask, IGConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, CsvTable};
use crate::model::{EmotionLabel, EmotionModel};
use crate::par;

pub use pipeline::{
    selection_pipeline, ReportTable, SelectionConfig, SelectionReport, SelectionRow,
};

/// The typical video chosen for each emotion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSet {
    pub ids: BTreeMap<EmotionLabel, u64>,
}

impl BaselineSet {
    pub fn get(&self, emotion: EmotionLabel) -> Option<u64> {
        self.ids.get(&emotion).copied()
    }
}

/// For every emotion present, the training sample of that emotion its own
/// classifier rates highest (lowest id on ties), unless overridden.
pub fn select_typical_baselines(
    ds: &Dataset,
    models: &BTreeMap<EmotionLabel, EmotionModel>,
    overrides: &BTreeMap<EmotionLabel, u64>,
) -> Result<BaselineSet> {
    let mut ids = BTreeMap::new();
    for (&emotion, &id) in overrides {
        match ds.get(id) {
            Some(s) if s.label == emotion => {
                ids.insert(emotion, id);
            }
            Some(s) => {
                return Err(Error::Coverage(format!(
                    "override for {emotion} points at sample {id}, which is labelled {}",
                    s.label
                )))
            }
            None => {
                return Err(Error::Coverage(format!(
                    "override sample {id} for {emotion} is not in the dataset"
                )))
            }
        }
    }
    for emotion in ds.emotions() {
        if ids.contains_key(&emotion) {
            continue;
        }
        let model = models
            .get(&emotion)
            .ok_or_else(|| Error::Coverage(format!("no trained model for {emotion}")))?;
        let mut candidates: Vec<&crate::data::VideoSample> =
            ds.samples.iter().filter(|s| s.label == emotion).collect();
        candidates.sort_by_key(|s| s.id);
        let tensors: Vec<_> = candidates.iter().map(|s| s.frames.clone()).collect();
        let probs = model.predict_batch(&tensors)?;
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        ids.insert(emotion, candidates[best].id);
    }
    Ok(BaselineSet { ids })
}

/// Which training samples enter the per-baseline average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionScope {
    #[default]
    AllSamples,
    TargetOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub ig: IGConfig,
    pub scope: AttributionScope,
    /// When false, missing complementary baselines are skipped instead of
    /// rejected (at least one is still required).
    pub require_full_complement: bool,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            ig: IGConfig::default(),
            scope: AttributionScope::AllSamples,
            require_full_complement: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalAttribution {
    pub emotion: EmotionLabel,
    pub mask: AttributionMask,
    pub sample_count: usize,
    pub baseline_ids: Vec<u64>,
    pub steps: usize,
    /// Sample-averaged mask for each baseline, aligned with `baseline_ids`.
    pub per_baseline: Vec<AttributionMask>,
    /// Model output at each baseline.
    pub baseline_outputs: Vec<f64>,
    /// Largest completeness gap over all IG evaluations.
    pub max_gap: f64,
}

fn mean_masks(masks: &[&AttributionMask]) -> AttributionMask {
    let l = masks[0].landmarks();
    let mut out = AttributionMask::zeros(l);
    for m in masks {
        for (o, s) in out.scores.iter_mut().zip(&m.scores) {
            *o += s;
        }
    }
    let n = masks.len() as f64;
    out.scores.iter_mut().for_each(|s| *s /= n);
    out
}

/// Attribution masks averaged over samples for each complementary
/// baseline, then over baselines.
pub fn global_attribution(
    emotion: EmotionLabel,
    model: &EmotionModel,
    train_set: &Dataset,
    baselines: &BaselineSet,
    config: &GlobalConfig,
) -> Result<GlobalAttribution> {
    config.ig.validate()?;
    let mut baseline_samples = Vec::new();
    for e in emotion.complements() {
        match baselines.get(e) {
            Some(id) => {
                let s = train_set.get(id).ok_or_else(|| {
                    Error::Coverage(format!("baseline {id} for {e} is not in the training set"))
                })?;
                baseline_samples.push(s);
            }
            None if config.require_full_complement => {
                return Err(Error::Coverage(format!(
                    "no baseline for complementary emotion {e}"
                )))
            }
            None => {}
        }
    }
    if baseline_samples.is_empty() {
        return Err(Error::Coverage(format!(
            "no complementary baselines for {emotion}"
        )));
    }
    let samples: Vec<_> = train_set
        .samples
        .iter()
        .filter(|s| config.scope == AttributionScope::AllSamples || s.label == emotion)
        .collect();
    if samples.is_empty() {
        return Err(Error::Argument(
            "global attribution needs at least one training sample".into(),
        ));
    }

    let (nb, ns) = (baseline_samples.len(), samples.len());
    let jobs = par::map_range(nb * ns, |j| {
        let (b, s) = (baseline_samples[j / ns], samples[j % ns]);
        let a = integrated_gradients(model, &s.frames, &b.frames, &config.ig)?;
        Ok::<_, Error>((
            attribution_mask(&a)?,
            a.completeness_gap(),
            a.baseline_output,
        ))
    });
    let jobs = jobs.into_iter().collect::<Result<Vec<_>>>()?;

    let per_baseline: Vec<AttributionMask> = jobs
        .chunks(ns)
        .map(|chunk| mean_masks(&chunk.iter().map(|j| &j.0).collect::<Vec<_>>()))
        .collect();
    let mask = mean_masks(&per_baseline.iter().collect::<Vec<_>>());
    if cfg!(debug_assertions) {
        let flat = mean_masks(&jobs.iter().map(|j| &j.0).collect::<Vec<_>>());
        for (a, b) in flat.scores.iter().zip(&mask.scores) {
            debug_assert!(
                (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                "nested mean {b} != flat mean {a}"
            );
        }
    }
    Ok(GlobalAttribution {
        emotion,
        mask,
        sample_count: ns,
        baseline_ids: baseline_samples.iter().map(|s| s.id).collect(),
        steps: config.ig.steps,
        per_baseline,
        baseline_outputs: jobs.chunks(ns).map(|c| c[0].2).collect(),
        max_gap: jobs.iter().map(|j| j.1).fold(0.0, f64::max),
    })
}

/// Indices sorted by descending score, ascending index on ties.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRanking {
    /// Landmark indices, most important first.
    pub order: Vec<usize>,
    /// Scores indexed by landmark.
    pub scores: Vec<f64>,
}

impl LandmarkRanking {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        Self {
            order: rank_order(&scores),
            scores,
        }
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }

    /// 1-based rank of each landmark.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.order.len()];
        for (i, &n) in self.order.iter().enumerate() {
            r[n] = i + 1;
        }
        r
    }
}

pub fn rank_landmarks(g: &GlobalAttribution) -> LandmarkRanking {
    LandmarkRanking::from_scores(g.mask.scores.clone())
}

fn score_rows(
    scores: &[f64],
    ranks: &[usize],
    order: impl Iterator<Item = usize>,
) -> Vec<Vec<String>> {
    order
        .map(|n| vec![n.to_string(), fmt_f64(scores[n]), ranks[n].to_string()])
        .collect()
}

const SCORE_HEADER: [&str; 3] = ["landmark", "score", "rank"];

/// Rows in landmark order.
impl CsvTable for GlobalAttribution {
    fn header(&self) -> Vec<String> {
        SCORE_HEADER.map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let ranks = LandmarkRanking::from_scores(self.mask.scores.clone()).ranks();
        score_rows(&self.mask.scores, &ranks, 0..self.mask.landmarks())
    }
}

/// Rows in rank order.
impl CsvTable for LandmarkRanking {
    fn header(&self) -> Vec<String> {
        SCORE_HEADER.map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        score_rows(&self.scores, &self.ranks(), self.order.iter().copied())
    }
}

/// A landmark subset plus the map back to original indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetDataset {
    pub dataset: Dataset,
    /// `original_indices[j]` is the original landmark behind new landmark `j`.
    pub original_indices: Vec<usize>,
}

impl SubsetDataset {
    /// Undoes a full-size reordering (`k = L`).
    pub fn inverse(&self) -> Result<Dataset> {
        let l = self.original_indices.len();
        let mut back = vec![usize::MAX; l];
        for (j, &n) in self.original_indices.iter().enumerate() {
            if n >= l || back[n] != usize::MAX {
                return Err(Error::Argument(
                    "only a full-size permutation can be inverted".into(),
                ));
            }
            back[n] = j;
        }
        self.dataset.reorder_landmarks(&back)
    }
}

/// Keeps the top `k` landmarks of `ranking`, in ranking order.
pub fn subset_dataset(ds: &Dataset, ranking: &LandmarkRanking, k: usize) -> Result<SubsetDataset> {
    if ranking.order.len() != ds.landmarks {
        return Err(Error::dim(
            "ranking length",
            ds.landmarks,
            ranking.order.len(),
        ));
    }
    if k == 0 || k > ds.landmarks {
        return Err(Error::Argument(format!(
            "subset size {k} outside 1..={}",
            ds.landmarks
        )));
    }
    let idx = ranking.top(k).to_vec();
    Ok(SubsetDataset {
        dataset: ds.reorder_landmarks(&idx)?,
        original_indices: idx,
    })
}
