//! Integrated Gradients over landmark sequences.

mod target;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{fmt_f64, parse_f64, read_csv, CsvTable};
use crate::tensor::Tensor;

pub use target::{AttributionTarget, LinearTarget, ScaledInput};

pub const DEFAULT_STEPS: usize = 50;

/// Interpolation steps evaluated per gradient batch.
const STEP_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IGConfig {
    pub steps: usize,
    pub include_alpha_zero_in_curves: bool,
}

impl Default for IGConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            include_alpha_zero_in_curves: true,
        }
    }
}

impl IGConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("IG needs at least one step".into()));
        }
        Ok(())
    }
}

/// Per-feature attributions for one (input, baseline) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionTensor {
    /// Same shape as the attributed input.
    pub values: Tensor,
    pub sample_id: Option<u64>,
    pub baseline_id: Option<u64>,
    pub steps: usize,
    /// `F(x)`.
    pub input_output: f64,
    /// `F(x′)`.
    pub baseline_output: f64,
}

impl AttributionTensor {
    pub fn with_ids(mut self, sample: u64, baseline: u64) -> Self {
        self.sample_id = Some(sample);
        self.baseline_id = Some(baseline);
        self
    }

    /// `|Σ IG − (F(x) − F(x′))|` from the stored endpoint outputs.
    pub fn completeness_gap(&self) -> f64 {
        (self.values.sum() - (self.input_output - self.baseline_output)).abs()
    }

    pub fn read_csv(path: &Path) -> Result<Tensor> {
        let (header, rows) = read_csv(path)?;
        if header != ["frame", "coord", "landmark", "value"] {
            return Err(Error::format(path, "unexpected attribution header"));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad index {s:?}")))
        };
        let mut cells = Vec::with_capacity(rows.len());
        let (mut p, mut l) = (0, 0);
        for r in &rows {
            let (f, c, n) = (idx(&r[0])?, idx(&r[1])?, idx(&r[2])?);
            p = p.max(f + 1);
            l = l.max(n + 1);
            cells.push(([f, c, n], parse_f64(&r[3])?));
        }
        let mut t = Tensor::zeros(&[p.max(1), 2, l.max(1), 1]);
        if cells.len() != p * 2 * l {
            return Err(Error::format(path, "attribution table is incomplete"));
        }
        for ([f, c, n], v) in cells {
            t.set(&[f, c, n, 0], v);
        }
        Ok(t)
    }
}

/// `(P, L)` of an attribution-shaped tensor (`P×2×L×1` or `P×2×L`).
fn frames_landmarks(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    match s {
        [p, 2, l, 1] | [p, 2, l] => Ok((*p, *l)),
        _ => Err(Error::shape("attribution tensor", &[0, 2, 0, 1], s)),
    }
}

impl CsvTable for AttributionTensor {
    fn header(&self) -> Vec<String> {
        ["frame", "coord", "landmark", "value"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let (p, l) = frames_landmarks(&self.values).unwrap_or((0, 0));
        let v = self.values.values();
        let mut rows = Vec::with_capacity(v.len());
        for f in 0..p {
            for c in 0..2 {
                for n in 0..l {
                    rows.push(vec![
                        f.to_string(),
                        c.to_string(),
                        n.to_string(),
                        fmt_f64(v[(f * 2 + c) * l + n]),
                    ]);
                }
            }
        }
        rows
    }
}

/// Non-negative importance per landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMask {
    pub scores: Vec<f64>,
}

impl AttributionMask {
    pub fn zeros(landmarks: usize) -> Self {
        Self {
            scores: vec![0.0; landmarks],
        }
    }

    pub fn landmarks(&self) -> usize {
        self.scores.len()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, rows) = read_csv(path)?;
        if header.first().map(String::as_str) != Some("landmark")
            || header.get(1).map(String::as_str) != Some("score")
        {
            return Err(Error::format(path, "expected landmark,score columns"));
        }
        let mut scores = vec![0.0; rows.len()];
        for r in &rows {
            let n: usize = r[0]
                .parse()
                .map_err(|_| Error::format(path, format!("bad landmark {:?}", r[0])))?;
            *scores
                .get_mut(n)
                .ok_or_else(|| Error::format(path, format!("landmark {n} out of range")))? =
                parse_f64(&r[1])?;
        }
        Ok(Self { scores })
    }
}

impl CsvTable for AttributionMask {
    fn header(&self) -> Vec<String> {
        vec!["landmark".into(), "score".into()]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.scores
            .iter()
            .enumerate()
            .map(|(n, s)| vec![n.to_string(), fmt_f64(*s)])
            .collect()
    }
}

/// Model output along the straight path from baseline to input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCurve {
    pub points: Vec<(f64, f64)>,
}

impl CsvTable for AlphaCurve {
    fn header(&self) -> Vec<String> {
        vec!["alpha".into(), "probability".into()]
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .map(|(a, p)| vec![fmt_f64(*a), fmt_f64(*p)])
            .collect()
    }
}

fn check_pair(input: &Tensor, baseline: &Tensor) -> Result<()> {
    if input.shape() != baseline.shape() {
        return Err(Error::shape(
            "input vs baseline",
            input.shape(),
            baseline.shape(),
        ));
    }
    Ok(())
}

fn path_point(baseline: &Tensor, input: &Tensor, k: usize, m: usize) -> Tensor {
    if k == m {
        return input.clone();
    }
    let t = k as f64 / m as f64;
    baseline
        .zip_map(input, |b, x| b + t * (x - b))
        .expect("shapes checked")
}

/// `x′ + (k/m)(x − x′)` for `k = 1..=m`; the last point is the input itself.
pub fn interpolate_path(baseline: &Tensor, input: &Tensor, m: usize) -> Result<Vec<Tensor>> {
    check_pair(input, baseline)?;
    if m == 0 {
        return Err(Error::Config("IG needs at least one step".into()));
    }
    Ok((1..=m).map(|k| path_point(baseline, input, k, m)).collect())
}

/// Right-endpoint Riemann approximation of the path integral:
/// `IGᵢ = (xᵢ − x′ᵢ)/m · Σₖ ∂F(x′ + k/m·(x − x′))/∂xᵢ`.
pub fn integrated_gradients<T: AttributionTarget + ?Sized>(
    target: &T,
    input: &Tensor,
    baseline: &Tensor,
    config: &IGConfig,
) -> Result<AttributionTensor> {
    config.validate()?;
    check_pair(input, baseline)?;
    let m = config.steps;
    let mut total = Tensor::zeros(input.shape());
    let mut input_output = f64::NAN;
    let mut k0 = 1;
    while k0 <= m {
        let k1 = (k0 + STEP_CHUNK - 1).min(m);
        let points: Vec<Tensor> = (k0..=k1)
            .map(|k| path_point(baseline, input, k, m))
            .collect();
        let evaluated = target.evaluate_with_gradients(&points)?;
        for (offset, (value, grad)) in evaluated.into_iter().enumerate() {
            let k = k0 + offset;
            if !value.is_finite() || !grad.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at interpolation step k = {k}"
                )));
            }
            total.add_assign(&grad);
            if k == m {
                input_output = value;
            }
        }
        k0 = k1 + 1;
    }
    let baseline_output = target.evaluate(std::slice::from_ref(baseline))?[0];
    let inv_m = 1.0 / m as f64;
    let diff = input.zip_map(baseline, |x, b| x - b)?;
    let values = diff.zip_map(&total, |d, g| d * (g * inv_m))?;
    Ok(AttributionTensor {
        values,
        sample_id: None,
        baseline_id: None,
        steps: m,
        input_output,
        baseline_output,
    })
}

/// Doubles `m` from `config.steps` until the completeness gap is at most
/// `tolerance` or `m` would exceed `max_steps`; returns the last result.
pub fn integrated_gradients_auto<T: AttributionTarget + ?Sized>(
    target: &T,
    input: &Tensor,
    baseline: &Tensor,
    config: &IGConfig,
    tolerance: f64,
    max_steps: usize,
) -> Result<AttributionTensor> {
    let mut cfg = *config;
    loop {
        let a = integrated_gradients(target, input, baseline, &cfg)?;
        let gap = a.completeness_gap();
        if gap <= tolerance || cfg.steps * 2 > max_steps {
            if gap > tolerance {
                log::warn!(
                    "IG gap {gap:.3e} still above {tolerance:.3e} at m = {}",
                    cfg.steps
                );
            }
            return Ok(a);
        }
        cfg.steps *= 2;
    }
}

/// `|Σᵢ IGᵢ − (F(x) − F(x′))|` with both endpoints evaluated afresh.
pub fn completeness_gap<T: AttributionTarget + ?Sized>(
    target: &T,
    input: &Tensor,
    baseline: &Tensor,
    attributions: &AttributionTensor,
) -> Result<f64> {
    check_pair(input, baseline)?;
    let out = target.evaluate(&[input.clone(), baseline.clone()])?;
    Ok((attributions.values.sum() - (out[0] - out[1])).abs())
}

/// `score(n) = Σ_p Σ_j |a[p, j, n]|`.
pub fn attribution_mask(a: &AttributionTensor) -> Result<AttributionMask> {
    let [x, y] = coordinate_masks(a)?;
    Ok(AttributionMask {
        scores: x.scores.iter().zip(&y.scores).map(|(x, y)| x + y).collect(),
    })
}

/// Separate x and y masks, each summed over frames only.
pub fn coordinate_masks(a: &AttributionTensor) -> Result<[AttributionMask; 2]> {
    let (p, l) = frames_landmarks(&a.values)?;
    let v = a.values.values();
    let mut out = [AttributionMask::zeros(l), AttributionMask::zeros(l)];
    for f in 0..p {
        for (c, mask) in out.iter_mut().enumerate() {
            let row = &v[(f * 2 + c) * l..(f * 2 + c + 1) * l];
            for (s, x) in mask.scores.iter_mut().zip(row) {
                *s += x.abs();
            }
        }
    }
    Ok(out)
}

/// `F` at `α = k/m` for `k = 0..=m` (or `1..=m`).
pub fn alpha_curve<T: AttributionTarget + ?Sized>(
    target: &T,
    input: &Tensor,
    baseline: &Tensor,
    config: &IGConfig,
) -> Result<AlphaCurve> {
    config.validate()?;
    check_pair(input, baseline)?;
    let m = config.steps;
    let start = usize::from(!config.include_alpha_zero_in_curves);
    let points: Vec<Tensor> = (start..=m)
        .map(|k| {
            if k == 0 {
                baseline.clone()
            } else {
                path_point(baseline, input, k, m)
            }
        })
        .collect();
    let probs = target.evaluate(&points)?;
    Ok(AlphaCurve {
        points: (start..=m)
            .map(|k| k as f64 / m as f64)
            .zip(probs)
            .collect(),
    })
}
