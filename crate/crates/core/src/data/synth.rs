use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, VideoSample, DEFAULT_CROP_SIZE};
use crate::error::{Error, Result};
use crate::model::EmotionLabel;
use crate::tensor::Tensor;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Planted-signal dataset description. Positive samples are labelled
/// `target`; negatives cycle through the other five emotions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub landmarks: usize,
    pub frames: usize,
    pub samples_per_class: usize,
    pub informative: Vec<usize>,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_target")]
    pub target: EmotionLabel,
}

fn default_target() -> EmotionLabel {
    EmotionLabel::Happiness
}

impl SyntheticSpec {
    /// `informative` is landmarks `0..informative_count` spread evenly over
    /// the index range.
    pub fn planted(
        landmarks: usize,
        informative_count: usize,
        frames: usize,
        samples_per_class: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        let informative = (0..informative_count)
            .map(|i| {
                (i * landmarks) / informative_count.max(1)
                    + (landmarks / informative_count.max(1)) / 2
            })
            .collect();
        Self {
            landmarks,
            frames,
            samples_per_class,
            informative,
            amplitude: 0.1,
            noise_sigma,
            seed,
            target: default_target(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.landmarks == 0 || self.frames == 0 || self.samples_per_class == 0 {
            return Err(Error::Config(
                "synthetic spec needs L, P and samples per class ≥ 1".into(),
            ));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!(
                "amplitude must be > 0, got {}",
                self.amplitude
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be ≥ 0, got {}",
                self.noise_sigma
            )));
        }
        let set: BTreeSet<_> = self.informative.iter().collect();
        if set.len() != self.informative.len() {
            return Err(Error::Config(
                "informative landmarks must be distinct".into(),
            ));
        }
        if let Some(bad) = self.informative.iter().find(|&&n| n >= self.landmarks) {
            return Err(Error::Config(format!(
                "informative landmark {bad} ≥ L = {}",
                self.landmarks
            )));
        }
        Ok(())
    }

    fn drift(&self, frame: usize) -> f64 {
        if self.frames == 1 {
            self.amplitude
        } else {
            self.amplitude * frame as f64 / (self.frames - 1) as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Base landmark positions, `2×L`.
    pub layout: Tensor,
    pub warnings: Vec<String>,
}

/// Sunflower layout of `L` points inside `[0.25, 0.75]²`, stored `2×L`.
pub fn reference_layout(landmarks: usize) -> Tensor {
    let mut t = Tensor::zeros(&[2, landmarks.max(1)]);
    for n in 0..landmarks {
        let r = 0.24 * ((n as f64 + 0.5) / landmarks as f64).sqrt();
        let theta = n as f64 * GOLDEN_ANGLE;
        t.set(&[0, n], 0.5 + r * theta.cos());
        t.set(&[1, n], 0.5 + r * theta.sin());
    }
    t
}

/// Positive samples drift their informative landmarks radially outward by
/// up to `amplitude` over the clip; everything gets i.i.d. noise and is
/// clamped to `[0, 1]`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (l, p) = (spec.landmarks, spec.frames);
    let layout = reference_layout(l);
    let informative: BTreeSet<usize> = spec.informative.iter().copied().collect();
    let mut warnings = Vec::new();

    for &n in &informative {
        let theta = n as f64 * GOLDEN_ANGLE;
        let (x0, y0) = (layout.at(&[0, n]), layout.at(&[1, n]));
        let (x1, y1) = (
            x0 + spec.amplitude * theta.cos(),
            y0 + spec.amplitude * theta.sin(),
        );
        let kept = ((x1.clamp(0.0, 1.0) - x0).powi(2) + (y1.clamp(0.0, 1.0) - y0).powi(2)).sqrt();
        if kept < 0.5 * spec.amplitude {
            warnings.push(format!(
                "clamping removes most of the drift on landmark {n}"
            ));
        }
    }
    if !informative.is_empty() && spec.amplitude < spec.noise_sigma {
        warnings.push(format!(
            "amplitude {} is below the noise sigma {}",
            spec.amplitude, spec.noise_sigma
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let negatives: Vec<EmotionLabel> = spec.target.complements().collect();
    let mut samples = Vec::with_capacity(2 * spec.samples_per_class);
    for i in 0..spec.samples_per_class {
        for positive in [true, false] {
            let id = samples.len() as u64;
            let label = if positive {
                spec.target
            } else {
                negatives[i % negatives.len()]
            };
            let mut values = Vec::with_capacity(p * 2 * l);
            for frame in 0..p {
                let d = spec.drift(frame);
                for axis in 0..2 {
                    for n in 0..l {
                        let mut v = layout.at(&[axis, n]);
                        if positive && informative.contains(&n) {
                            let theta = n as f64 * GOLDEN_ANGLE;
                            v += d * if axis == 0 { theta.cos() } else { theta.sin() };
                        }
                        if spec.noise_sigma > 0.0 {
                            v += noise.sample(&mut rng);
                        }
                        values.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            samples.push(VideoSample::new(
                id,
                Tensor::new(&[p, 2, l], values)?,
                label,
            )?);
        }
    }
    let dataset = Dataset {
        frames: p,
        landmarks: l,
        crop_size: DEFAULT_CROP_SIZE,
        samples,
    };
    Ok(SyntheticData {
        dataset,
        layout,
        warnings,
    })
}

/// Per-landmark Fisher separation between the target class and the rest,
/// averaged over frames and coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrReport {
    pub per_landmark: Vec<f64>,
    pub informative_mean: f64,
    pub uninformative_mean: f64,
    /// `informative_mean / uninformative_mean`.
    pub ratio: f64,
}

pub fn signal_to_noise(
    ds: &Dataset,
    target: EmotionLabel,
    informative: &[usize],
) -> Result<SnrReport> {
    let (pos, neg): (Vec<_>, Vec<_>) = ds.samples.iter().partition(|s| s.label == target);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Argument(
            "signal_to_noise needs both classes present".into(),
        ));
    }
    let moments = |group: &[&VideoSample], f: usize, a: usize, n: usize| {
        let k = group.len() as f64;
        let mean = group.iter().map(|s| s.coord(f, a, n)).sum::<f64>() / k;
        let var = group
            .iter()
            .map(|s| (s.coord(f, a, n) - mean).powi(2))
            .sum::<f64>()
            / k;
        (mean, var)
    };
    let per_landmark: Vec<f64> = (0..ds.landmarks)
        .map(|n| {
            let mut total = 0.0;
            for f in 0..ds.frames {
                for a in 0..2 {
                    let (m1, v1) = moments(&pos, f, a, n);
                    let (m0, v0) = moments(&neg, f, a, n);
                    let gap = (m1 - m0).powi(2);
                    total += if gap == 0.0 { 0.0 } else { gap / (v1 + v0) };
                }
            }
            total / (2 * ds.frames) as f64
        })
        .collect();
    let inf: BTreeSet<usize> = informative.iter().copied().collect();
    let mean_of = |pick: bool| {
        let vals: Vec<f64> = per_landmark
            .iter()
            .enumerate()
            .filter(|(n, _)| inf.contains(n) == pick)
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let (informative_mean, uninformative_mean) = (mean_of(true), mean_of(false));
    Ok(SnrReport {
        ratio: informative_mean / uninformative_mean,
        per_landmark,
        informative_mean,
        uninformative_mean,
    })
}
