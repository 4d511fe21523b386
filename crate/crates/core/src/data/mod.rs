//! Landmark video datasets.

mod augment;
mod io;
mod synth;

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{EmotionLabel, COORD_TOLERANCE};
use crate::tensor::Tensor;

pub use augment::{augment_dataset, denormalize_coords, flip_augment, normalize_coords, FlipAxis};
pub use io::{
    load_dataset, read_sample_file, save_dataset, write_sample_file, DatasetManifest, SampleRecord,
    MANIFEST_VERSION, SAMPLE_MAGIC, SAMPLE_VERSION,
};
pub use synth::{
    generate_synthetic, reference_layout, signal_to_noise, SnrReport, SyntheticData, SyntheticSpec,
};

pub const DEFAULT_CROP_SIZE: f64 = 300.0;
pub const DEFAULT_FRAMES: usize = 8;

/// One video's landmark track: a `P×2×L` tensor of normalized `(x, y)`
/// coordinates per frame and landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: u64,
    pub frames: Tensor,
    pub label: EmotionLabel,
    pub augmented: bool,
}

impl VideoSample {
    pub fn new(id: u64, frames: Tensor, label: EmotionLabel) -> Result<Self> {
        if frames.rank() != 3 || frames.shape()[1] != 2 {
            return Err(Error::SampleLoad {
                sample_id: id,
                reason: format!("expected a P×2×L tensor, got shape {:?}", frames.shape()),
            });
        }
        Ok(Self {
            id,
            frames,
            label,
            augmented: false,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_landmarks(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn coord(&self, frame: usize, axis: usize, landmark: usize) -> f64 {
        self.frames.at(&[frame, axis, landmark])
    }

    /// Binary target for an "is `emotion`" classifier.
    pub fn binary_label(&self, emotion: EmotionLabel) -> f64 {
        if self.label == emotion {
            1.0
        } else {
            0.0
        }
    }
}

/// A set of samples sharing `P` frames and `L` landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: usize,
    pub landmarks: usize,
    pub crop_size: f64,
    pub samples: Vec<VideoSample>,
}

impl Dataset {
    pub fn new(frames: usize, landmarks: usize, samples: Vec<VideoSample>) -> Result<Self> {
        let ds = Self {
            frames,
            landmarks,
            crop_size: DEFAULT_CROP_SIZE,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Shapes agree, ids are unique and every coordinate is in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.landmarks == 0 {
            return Err(Error::Config(
                "datasets need at least one frame and one landmark".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(s.id) {
                return Err(Error::SampleLoad {
                    sample_id: s.id,
                    reason: "duplicate sample id".into(),
                });
            }
            let expect = [self.frames, 2, self.landmarks];
            if s.frames.shape() != expect {
                return Err(Error::SampleLoad {
                    sample_id: s.id,
                    reason: format!("shape {:?}, expected {:?}", s.frames.shape(), expect),
                });
            }
            if let Some(v) = s
                .frames
                .values()
                .iter()
                .find(|v| !(**v >= -COORD_TOLERANCE && **v <= 1.0 + COORD_TOLERANCE))
            {
                return Err(Error::SampleLoad {
                    sample_id: s.id,
                    reason: format!("coordinate {v} outside [0, 1]"),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&VideoSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn emotions(&self) -> BTreeSet<EmotionLabel> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// A dataset holding clones of the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            frames: self.frames,
            landmarks: self.landmarks,
            crop_size: self.crop_size,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.samples.iter().map(|s| s.frames.clone()).collect()
    }

    pub fn binary_labels(&self, emotion: EmotionLabel) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.binary_label(emotion))
            .collect()
    }

    /// Keeps landmarks `order[0], order[1], …` in that order, so new landmark
    /// `j` is original landmark `order[j]`.
    pub fn reorder_landmarks(&self, order: &[usize]) -> Result<Dataset> {
        if order.is_empty() || order.len() > self.landmarks {
            return Err(Error::Argument(format!(
                "landmark subset size must be in 1..={}, got {}",
                self.landmarks,
                order.len()
            )));
        }
        if let Some(&bad) = order.iter().find(|&&i| i >= self.landmarks) {
            return Err(Error::Argument(format!(
                "landmark index {bad} out of range"
            )));
        }
        let k = order.len();
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let p = s.num_frames();
                let mut values = Vec::with_capacity(p * 2 * k);
                for frame in 0..p {
                    for axis in 0..2 {
                        values.extend(order.iter().map(|&n| s.coord(frame, axis, n)));
                    }
                }
                VideoSample {
                    id: s.id,
                    frames: Tensor::new(&[p, 2, k], values).expect("consistent shape"),
                    label: s.label,
                    augmented: s.augmented,
                }
            })
            .collect();
        Ok(Dataset {
            frames: self.frames,
            landmarks: k,
            crop_size: self.crop_size,
            samples,
        })
    }
}
