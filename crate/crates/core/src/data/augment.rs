use serde::{Deserialize, Serialize};

use super::{Dataset, VideoSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which coordinate a flip mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// `x → 1 - x`: mirror about the vertical axis of the face (default).
    #[default]
    X,
    /// `y → 1 - y`: upside-down flip.
    Y,
}

impl std::str::FromStr for FlipAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(FlipAxis::X),
            "y" => Ok(FlipAxis::Y),
            other => Err(Error::Argument(format!(
                "flip axis must be x or y, got {other:?}"
            ))),
        }
    }
}

/// Divides pixel coordinates of a `300×300`-style crop by the crop size.
pub fn normalize_coords(raw: &Tensor, crop_size: f64) -> Result<Tensor> {
    if crop_size <= 0.0 || !crop_size.is_finite() {
        return Err(Error::Validation(format!(
            "crop size must be positive, got {crop_size}"
        )));
    }
    if let Some(v) = raw
        .values()
        .iter()
        .find(|v| !(**v >= 0.0 && **v <= crop_size))
    {
        return Err(Error::Validation(format!(
            "raw coordinate {v} outside [0, {crop_size}]"
        )));
    }
    Ok(raw.map(|v| v / crop_size))
}

pub fn denormalize_coords(normalized: &Tensor, crop_size: f64) -> Tensor {
    normalized.map(|v| v * crop_size)
}

/// Mirrors every frame of a sample. The label is preserved and the sample is
/// marked as augmented; coordinates stay in `[0, 1]`.
pub fn flip_augment(sample: &VideoSample, axis: FlipAxis) -> VideoSample {
    let mut frames = sample.frames.clone();
    let (p, l) = (sample.num_frames(), sample.num_landmarks());
    let a = match axis {
        FlipAxis::X => 0,
        FlipAxis::Y => 1,
    };
    for frame in 0..p {
        for n in 0..l {
            let v = frames.at(&[frame, a, n]);
            frames.set(&[frame, a, n], (1.0 - v).clamp(0.0, 1.0));
        }
    }
    VideoSample {
        id: sample.id,
        frames,
        label: sample.label,
        augmented: true,
    }
}

/// Appends a flipped copy of every sample. Copies get fresh ids starting
/// after the largest existing id, in sample order.
pub fn augment_dataset(ds: &Dataset, axis: FlipAxis) -> Dataset {
    let next = ds.samples.iter().map(|s| s.id + 1).max().unwrap_or(0);
    let mut samples = ds.samples.clone();
    samples.extend(ds.samples.iter().enumerate().map(|(i, s)| {
        let mut f = flip_augment(s, axis);
        f.id = next + i as u64;
        f
    }));
    Dataset {
        samples,
        ..ds.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmotionLabel;

    #[test]
    fn normalization_examples() {
        let raw = Tensor::new(&[1, 2, 2], vec![150.0, 0.0, 300.0, 0.0]).unwrap();
        let n = normalize_coords(&raw, 300.0).unwrap();
        assert_eq!(n.values(), &[0.5, 0.0, 1.0, 0.0]);
        let back = denormalize_coords(&n, 300.0);
        assert!(back.max_abs_diff(&raw) < 1e-12);
        let bad = Tensor::new(&[1, 2, 1], vec![301.0, 3.0]).unwrap();
        assert!(matches!(
            normalize_coords(&bad, 300.0),
            Err(Error::Validation(_))
        ));
        assert!(normalize_coords(&raw, 0.0).is_err());
    }

    #[test]
    fn flip_examples() {
        let frames = Tensor::from_fn(&[3, 2, 5], |i| {
            if (i / 5) % 2 == 0 {
                0.5
            } else {
                (i % 7) as f64 / 7.0
            }
        });
        let s = VideoSample::new(4, frames, EmotionLabel::Happiness).unwrap();
        let f = flip_augment(&s, FlipAxis::X);
        assert!(f.augmented);
        assert_eq!(f.label, s.label);
        for p in 0..3 {
            for n in 0..5 {
                assert_eq!(f.coord(p, 0, n), 0.5);
                assert_eq!(f.coord(p, 1, n), s.coord(p, 1, n));
            }
        }
        let twice = flip_augment(&flip_augment(&s, FlipAxis::Y), FlipAxis::Y);
        assert!(twice.frames.max_abs_diff(&s.frames) < 1e-15);
    }

    #[test]
    fn dataset_augmentation_doubles_with_fresh_ids() {
        let s =
            |id| VideoSample::new(id, Tensor::filled(&[1, 2, 3], 0.2), EmotionLabel::Fear).unwrap();
        let ds = Dataset::new(1, 3, vec![s(0), s(7)]).unwrap();
        let aug = augment_dataset(&ds, FlipAxis::X);
        assert_eq!(aug.len(), 4);
        aug.validate().unwrap();
        assert_eq!(aug.samples[2].id, 8);
        assert_eq!(aug.samples[3].id, 9);
    }
}
