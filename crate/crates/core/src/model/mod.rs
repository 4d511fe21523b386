//! The T-EMO / R-EMO binary emotion classifier.
//!
//! Layer sequence, applied to a `P×2×L×1` landmark video:
//!
//! 1. per-frame valid cross-correlation of the `2×L` coordinate image with
//!    `F` kernels of shape `kh×kw`, followed by ReLU;
//! 2. batch normalization per feature-map channel, with statistics over the
//!    batch, the frames and the spatial positions;
//! 3. flatten each frame's normalized maps into a vector of length
//!    `D = (3-kh)·(L-kw+1)·F`;
//! 4. an LSTM with `Q` units over the `P` frame vectors, keeping the final
//!    hidden state;
//! 5. dropout, FC1 (`R` neurons, ReLU), FC2 (2 neurons) and softmax.
//!
//! The model output is the softmax component of the positive ("is this
//! emotion") class. R-EMO freezes the convolution kernels and bias at their
//! random initialization.
//!
//! Trainable parameter count for T-EMO, with `D` as above:
//!
//! ```text
//! kh·kw·F + F          convolution
//! 2F                   batch-norm gamma, beta
//! 4Q·D + 4Q·Q + 4Q     LSTM
//! Q·R + R              FC1
//! 2R + 2               FC2
//! ```
//!
//! For R-EMO the `kh·kw·F + F` convolution scalars move to the frozen count.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    dense, lstm_step, BatchNormState, BoundParams, LstmWeights, ParameterStore, Tape, Var,
};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Coordinates may exceed `[0, 1]` by at most this much.
pub const COORD_TOLERANCE: f64 = 1e-6;

/// Samples per tape when evaluating many inputs.
const EVAL_CHUNK: usize = 16;

/// The six analyzed emotions. Contempt is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionLabel {
    Anger,
    Disgust,
    Fear,
    Happiness,
    Sadness,
    Surprise,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Happiness,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
    ];

    /// The five other emotions.
    pub fn complements(self) -> impl Iterator<Item = EmotionLabel> {
        Self::ALL.into_iter().filter(move |&e| e != self)
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "Anger",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Happiness => "Happiness",
            EmotionLabel::Sadness => "Sadness",
            EmotionLabel::Surprise => "Surprise",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|e| e.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                if lower == "contempt" {
                    Error::Argument("contempt is not an analyzed emotion".into())
                } else {
                    Error::Argument(format!("unknown emotion {s:?}"))
                }
            })
    }
}

fn default_kernel() -> (usize, usize) {
    (2, 3)
}

fn default_dropout() -> f64 {
    0.5
}

fn default_momentum() -> f64 {
    BatchNormState::DEFAULT_MOMENTUM
}

fn default_bn_eps() -> f64 {
    BatchNormState::DEFAULT_EPS
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Convolution filters `F`.
    pub conv_filters: usize,
    /// LSTM units `Q`.
    pub lstm_units: usize,
    /// FC1 neurons `R`.
    pub fc1_neurons: usize,
    #[serde(default = "default_kernel")]
    pub kernel_shape: (usize, usize),
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    /// R-EMO when set: convolution kernels stay at their random initialization.
    #[serde(default)]
    pub randomized_conv: bool,
    pub num_landmarks: usize,
    pub num_frames: usize,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
}

impl ModelConfig {
    pub fn new(
        conv_filters: usize,
        lstm_units: usize,
        fc1_neurons: usize,
        num_landmarks: usize,
        num_frames: usize,
    ) -> Self {
        Self {
            conv_filters,
            lstm_units,
            fc1_neurons,
            kernel_shape: default_kernel(),
            dropout_rate: default_dropout(),
            randomized_conv: false,
            num_landmarks,
            num_frames,
            bn_momentum: default_momentum(),
            bn_eps: default_bn_eps(),
        }
    }

    pub fn randomized(mut self, on: bool) -> Self {
        self.randomized_conv = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("conv_filters", self.conv_filters),
            ("lstm_units", self.lstm_units),
            ("fc1_neurons", self.fc1_neurons),
            ("num_landmarks", self.num_landmarks),
            ("num_frames", self.num_frames),
            ("kernel height", self.kernel_shape.0),
            ("kernel width", self.kernel_shape.1),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let (kh, kw) = self.kernel_shape;
        if kh > 2 {
            return Err(Error::Config(format!(
                "kernel height {kh} exceeds the 2-row coordinate image"
            )));
        }
        if kw > self.num_landmarks {
            return Err(Error::Config(format!(
                "kernel width {kw} exceeds the {} landmarks",
                self.num_landmarks
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config(
                "batch-norm momentum must be in [0,1] and eps > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn conv_out_height(&self) -> usize {
        2 - self.kernel_shape.0 + 1
    }

    pub fn conv_out_width(&self) -> usize {
        self.num_landmarks - self.kernel_shape.1 + 1
    }

    /// Length of one frame's flattened feature vector fed to the LSTM.
    pub fn lstm_input_dim(&self) -> usize {
        self.conv_out_height() * self.conv_out_width() * self.conv_filters
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.num_frames, 2, self.num_landmarks, 1]
    }

    /// Closed-form `(trainable, frozen)` scalar counts.
    pub fn parameter_count(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel_shape;
        let (f, q, r) = (self.conv_filters, self.lstm_units, self.fc1_neurons);
        let d = self.lstm_input_dim();
        let conv = kh * kw * f + f;
        let rest = 2 * f + (4 * q * d + 4 * q * q + 4 * q) + (q * r + r) + (2 * r + 2);
        if self.randomized_conv {
            (rest, conv)
        } else {
            (conv + rest, 0)
        }
    }
}

pub mod names {
    pub const CONV_KERNEL: &str = "conv.kernel";
    pub const CONV_BIAS: &str = "conv.bias";
    pub const BN_GAMMA: &str = "bn.gamma";
    pub const BN_BETA: &str = "bn.beta";
    pub const LSTM_INPUT: &str = "lstm.input";
    pub const LSTM_RECURRENT: &str = "lstm.recurrent";
    pub const LSTM_BIAS: &str = "lstm.bias";
    pub const FC1_WEIGHT: &str = "fc1.weight";
    pub const FC1_BIAS: &str = "fc1.bias";
    pub const FC2_WEIGHT: &str = "fc2.weight";
    pub const FC2_BIAS: &str = "fc2.bias";
}

/// A binary "is this emotion" classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
    /// Batch-norm running statistics (buffers, not parameters).
    pub bn_state: BatchNormState,
    pub target: EmotionLabel,
    pub seed: u64,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

/// Softmax components from one forward graph.
pub struct ForwardOutput {
    /// `N×2` softmax rows.
    pub softmax: Var,
    /// Length-`N` positive-class probabilities.
    pub probs: Var,
}

impl EmotionModel {
    /// Builds a model with weights drawn uniformly in `±√(6/(fan_in+fan_out))`.
    /// Biases start at zero except the LSTM forget-gate block, which starts at one.
    pub fn build(config: ModelConfig, target: EmotionLabel, seed: u64) -> Result<Self> {
        use names::*;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (kh, kw) = config.kernel_shape;
        let (f, q, r) = (config.conv_filters, config.lstm_units, config.fc1_neurons);
        let d = config.lstm_input_dim();
        let conv_trainable = !config.randomized_conv;

        let mut params = ParameterStore::new();
        params.insert(
            CONV_KERNEL,
            glorot(&mut rng, &[kh, kw, 1, f], kh * kw, kh * kw * f),
            conv_trainable,
        )?;
        params.insert(CONV_BIAS, Tensor::zeros(&[f]), conv_trainable)?;
        params.insert(BN_GAMMA, Tensor::filled(&[f], 1.0), true)?;
        params.insert(BN_BETA, Tensor::zeros(&[f]), true)?;
        params.insert(LSTM_INPUT, glorot(&mut rng, &[d, 4 * q], d, 4 * q), true)?;
        params.insert(
            LSTM_RECURRENT,
            glorot(&mut rng, &[q, 4 * q], q, 4 * q),
            true,
        )?;
        let lstm_bias = Tensor::from_fn(
            &[4 * q],
            |i| if (q..2 * q).contains(&i) { 1.0 } else { 0.0 },
        );
        params.insert(LSTM_BIAS, lstm_bias, true)?;
        params.insert(FC1_WEIGHT, glorot(&mut rng, &[q, r], q, r), true)?;
        params.insert(FC1_BIAS, Tensor::zeros(&[r]), true)?;
        params.insert(FC2_WEIGHT, glorot(&mut rng, &[r, 2], r, 2), true)?;
        params.insert(FC2_BIAS, Tensor::zeros(&[2]), true)?;

        let bn_state = BatchNormState::with_params(f, config.bn_momentum, config.bn_eps);
        Ok(Self {
            config,
            params,
            bn_state,
            target,
            seed,
        })
    }

    /// `(trainable, frozen)` scalar counts taken from the parameter store.
    pub fn parameter_count(&self) -> (usize, usize) {
        self.params.counts()
    }

    /// Checks one sample's shape (`P×2×L×1` or `P×2×L`) and coordinate range.
    pub fn validate_sample(&self, sample: &Tensor) -> Result<()> {
        let [p, c, l, _] = self.config.input_shape();
        let shape = sample.shape();
        let ok = shape == [p, c, l, 1] || shape == [p, c, l];
        if !ok {
            return Err(Error::shape(
                "model input",
                &self.config.input_shape(),
                shape,
            ));
        }
        if let Some(v) = sample
            .values()
            .iter()
            .find(|v| !(**v >= -COORD_TOLERANCE && **v <= 1.0 + COORD_TOLERANCE))
        {
            return Err(Error::Validation(format!(
                "coordinate {v} outside the normalized range [0, 1]"
            )));
        }
        Ok(())
    }

    /// Stacks validated samples into the `N·P×2×L×1` image batch.
    pub fn stack(&self, samples: &[&Tensor]) -> Result<Tensor> {
        if samples.is_empty() {
            return Err(Error::Argument("empty input batch".into()));
        }
        let mut values = Vec::with_capacity(samples.len() * samples[0].len());
        for s in samples {
            self.validate_sample(s)?;
            values.extend_from_slice(s.values());
        }
        let [p, c, l, _] = self.config.input_shape();
        Tensor::new(&[samples.len() * p, c, l, 1], values)
    }

    /// Records the forward pass on `tape`.
    ///
    /// `input` must be an `N·P×2×L×1` batch (see [`stack`](Self::stack)). In
    /// training mode dropout is active and batch norm uses (and updates) batch
    /// statistics in `bn`; in inference mode `bn` is read only.
    pub fn forward_graph<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        input: Var,
        bn: &mut BatchNormState,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        use names::*;
        let cfg = &self.config;
        let images = tape.value(input).shape()[0];
        if !images.is_multiple_of(cfg.num_frames) {
            return Err(Error::dim("stacked frames", cfg.num_frames, images));
        }
        let n = images / cfg.num_frames;
        let f = cfg.conv_filters;

        let conv = tape.conv2d(input, params.var(CONV_KERNEL)?, params.var(CONV_BIAS)?)?;
        let conv = tape.relu(conv);
        let rows = images * cfg.conv_out_height() * cfg.conv_out_width();
        let flat = tape.reshape(conv, &[rows, f])?;
        let normed = tape.batch_norm(
            flat,
            params.var(BN_GAMMA)?,
            params.var(BN_BETA)?,
            bn,
            training,
        )?;
        let seq = tape.reshape(normed, &[n, cfg.num_frames, cfg.lstm_input_dim()])?;

        let weights = LstmWeights {
            input: params.var(LSTM_INPUT)?,
            recurrent: params.var(LSTM_RECURRENT)?,
            bias: params.var(LSTM_BIAS)?,
        };
        let q = cfg.lstm_units;
        let mut h = tape.constant(Tensor::zeros(&[n, q]));
        let mut c = tape.constant(Tensor::zeros(&[n, q]));
        for t in 0..cfg.num_frames {
            let x = tape.take_step(seq, t)?;
            (h, c) = lstm_step(tape, x, h, c, &weights)?;
        }

        let h = tape.dropout(h, cfg.dropout_rate, training, rng)?;
        let fc1 = dense(tape, h, params.var(FC1_WEIGHT)?, params.var(FC1_BIAS)?)?;
        let fc1 = tape.relu(fc1);
        let logits = dense(tape, fc1, params.var(FC2_WEIGHT)?, params.var(FC2_BIAS)?)?;
        let softmax = tape.softmax(logits)?;
        let probs = tape.select_col(softmax, 1)?;
        Ok(ForwardOutput { softmax, probs })
    }

    fn infer_chunk(
        &self,
        samples: &[&Tensor],
        with_grad: bool,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let batch = self.stack(samples)?;
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape, false);
        let input = tape.leaf(batch, with_grad);
        let mut bn = self.bn_state.clone();
        let mut no_rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_graph(&mut tape, &params, input, &mut bn, false, &mut no_rng)?;
        let softmax = tape.value(out.softmax).clone();
        softmax.ensure_finite("model forward")?;
        if !with_grad {
            return Ok((softmax, None));
        }
        let total = tape.sum(out.probs);
        let grads = tape.backward(total)?;
        let g = grads.wrt(input, &tape)?;
        g.ensure_finite("input gradient")?;
        Ok((softmax, Some(g)))
    }

    /// Softmax rows `[negative, positive]` for each sample, in inference mode.
    pub fn class_probabilities(&self, samples: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        let chunks: Vec<&[Tensor]> = samples.chunks(EVAL_CHUNK).collect();
        let parts = par::map(&chunks, |chunk| {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            self.infer_chunk(&refs, false)
        });
        let mut out = Vec::with_capacity(samples.len());
        for part in parts {
            let (sm, _) = part?;
            out.extend(sm.values().chunks(2).map(|r| [r[0], r[1]]));
        }
        Ok(out)
    }

    /// Positive-class probability for one sample, in inference mode.
    pub fn predict(&self, sample: &Tensor) -> Result<f64> {
        let (sm, _) = self.infer_chunk(&[sample], false)?;
        Ok(sm.values()[1])
    }

    pub fn predict_batch(&self, samples: &[Tensor]) -> Result<Vec<f64>> {
        Ok(self
            .class_probabilities(samples)?
            .into_iter()
            .map(|r| r[1])
            .collect())
    }

    /// Inference-mode probabilities and their gradients with respect to each
    /// input sample. Gradients have the sample's own shape.
    pub fn input_gradients(&self, samples: &[Tensor]) -> Result<Vec<(f64, Tensor)>> {
        let chunks: Vec<&[Tensor]> = samples.chunks(EVAL_CHUNK).collect();
        let parts = par::map(&chunks, |chunk| {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            self.infer_chunk(&refs, true)
        });
        let mut out = Vec::with_capacity(samples.len());
        let mut idx = 0;
        for part in parts {
            let (sm, g) = part?;
            let g = g.expect("gradients requested");
            let per = g.len() / (sm.len() / 2);
            for (row, gs) in sm.values().chunks(2).zip(g.values().chunks(per)) {
                let shape = samples[idx].shape();
                out.push((row[1], Tensor::new(shape, gs.to_vec())?));
                idx += 1;
            }
        }
        Ok(out)
    }

    /// Training-mode forward pass: dropout active, batch statistics used and
    /// the running statistics updated.
    pub fn forward_training<R: Rng + ?Sized>(
        &mut self,
        samples: &[Tensor],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let refs: Vec<&Tensor> = samples.iter().collect();
        let batch = self.stack(&refs)?;
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape, false);
        let input = tape.constant(batch);
        let mut bn = self.bn_state.clone();
        let out = self.forward_graph(&mut tape, &params, input, &mut bn, true, rng)?;
        self.bn_state = bn;
        Ok(tape.value(out.probs).values().to_vec())
    }
}
