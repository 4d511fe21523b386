use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use emo_ig::data::SyntheticSpec;
use emo_ig::model::ModelConfig;
use emo_ig::selection::GlobalConfig;
use emo_ig::training::{GridSpec, TrainConfig, DEFAULT_GRID_SEEDS, DEFAULT_REPORT_SEEDS};

/// Everything a `--config` TOML file may set. All sections are optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub attribution: GlobalConfig,
    pub selection: SelectionSection,
    pub synth: Option<SyntheticSpec>,
}

/// Architecture settings; landmark and frame counts come from the data.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub conv_filters: usize,
    pub lstm_units: usize,
    pub fc1_neurons: usize,
    pub kernel_shape: (usize, usize),
    pub dropout_rate: f64,
    pub randomized_conv: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::new(33, 49, 54, 1, 1);
        Self {
            conv_filters: c.conv_filters,
            lstm_units: c.lstm_units,
            fc1_neurons: c.fc1_neurons,
            kernel_shape: c.kernel_shape,
            dropout_rate: c.dropout_rate,
            randomized_conv: c.randomized_conv,
            bn_momentum: c.bn_momentum,
            bn_eps: c.bn_eps,
        }
    }
}

impl ModelSection {
    pub fn build(&self, landmarks: usize, frames: usize) -> ModelConfig {
        ModelConfig {
            conv_filters: self.conv_filters,
            lstm_units: self.lstm_units,
            fc1_neurons: self.fc1_neurons,
            kernel_shape: self.kernel_shape,
            dropout_rate: self.dropout_rate,
            randomized_conv: self.randomized_conv,
            num_landmarks: landmarks,
            num_frames: frames,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub ladder: Option<Vec<usize>>,
    pub grid_seeds: usize,
    pub report_seeds: usize,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            ladder: None,
            grid_seeds: DEFAULT_GRID_SEEDS,
            report_seeds: DEFAULT_REPORT_SEEDS,
        }
    }
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.train.validate()?;
    cfg.attribution.ig.validate()?;
    Ok(cfg)
}

/// A grid file: an optional `[default]` grid plus per-size grids under
/// `[sizes.<k>]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridFile {
    pub default: Option<GridSpec>,
    pub sizes: BTreeMap<String, GridSpec>,
}

impl GridFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let g: GridFile =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for spec in g.default.iter().chain(g.sizes.values()) {
            spec.validate()?;
        }
        Ok(g)
    }

    pub fn per_size(&self) -> Result<BTreeMap<usize, GridSpec>> {
        let mut out = BTreeMap::new();
        for (k, spec) in &self.sizes {
            let Ok(size) = k.parse::<usize>() else {
                bail!("grid section sizes.{k} is not a landmark count");
            };
            out.insert(size, spec.clone());
        }
        Ok(out)
    }
}
