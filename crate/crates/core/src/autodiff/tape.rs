//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;

use super::kernels::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols {
        src: Var,
        start: usize,
    },
    Reshape(Var),
    TakeStep {
        src: Var,
        step: usize,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Softmax(Var),
    SelectCol {
        src: Var,
        col: usize,
    },
    Sum(Var),
    Bce {
        probs: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Running statistics for a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-3;

    pub fn new(features: usize) -> Self {
        Self::with_params(features, Self::DEFAULT_MOMENTUM, Self::DEFAULT_EPS)
    }

    pub fn with_params(features: usize, momentum: f64, eps: f64) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            eps,
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a node that required grad. Nodes the output does not depend
    /// on get an all-zero gradient rather than an error.
    pub fn wrt(&self, var: Var, tape: &Tape) -> Result<Tensor> {
        if !tape.nodes[var.0].requires_grad {
            return Err(Error::Contract(format!(
                "node {} was not marked as requiring a gradient",
                var.0
            )));
        }
        Ok(self
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape())))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [m, n] => Ok((m, n)),
        _ => Err(Error::dim(format!("{what} rank"), 2, t.rank())),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul lhs")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim("matmul inner axis", k, k2));
        }
        let c = kernels::matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], c)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = matrix_dims(self.value(a), "add_row lhs")?;
        let bv = self.value(bias);
        if bv.len() != n {
            return Err(Error::dim("bias length", n, bv.len()));
        }
        let mut out = self.value(a).clone();
        for row in out.values_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(self.value(bias).values()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// Columns `start..start+len` of an `m×n` matrix.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(src), "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::dim("slice end", n, start + len));
        }
        let sv = self.value(src).values();
        let mut out = Vec::with_capacity(m * len);
        for row in sv.chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(&[src]);
        Ok(self.push(
            Tensor::new(&[m, len], out)?,
            Op::SliceCols { src, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(src).clone().reshape(shape)?;
        let rg = self.rg(&[src]);
        Ok(self.push(out, Op::Reshape(src), rg))
    }

    /// Selects time step `step` from an `N×T×D` tensor, giving `N×D`.
    pub fn take_step(&mut self, src: Var, step: usize) -> Result<Var> {
        let (n, t, d) = match *self.value(src).shape() {
            [n, t, d] => (n, t, d),
            _ => return Err(Error::dim("take_step rank", 3, self.value(src).rank())),
        };
        if step >= t {
            return Err(Error::dim("time axis", t, step + 1));
        }
        let sv = self.value(src).values();
        let mut out = Vec::with_capacity(n * d);
        for b in 0..n {
            out.extend_from_slice(&sv[(b * t + step) * d..(b * t + step + 1) * d]);
        }
        let rg = self.rg(&[src]);
        Ok(self.push(Tensor::new(&[n, d], out)?, Op::TakeStep { src, step }, rg))
    }

    /// Valid (no padding), stride-1 cross-correlation of single-channel images.
    ///
    /// `input` is `H×W×1` or a batch `B×H×W×1`; `kernels` is `kh×kw×1×F` and
    /// `bias` has length `F`. The output is `H'×W'×F` (or `B×H'×W'×F`) with
    /// `H' = H-kh+1`, `W' = W-kw+1`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        let (batch, height, width, channels, batched) = match ishape[..] {
            [h, w, c] => (1, h, w, c, false),
            [b, h, w, c] => (b, h, w, c, true),
            _ => return Err(Error::dim("conv2d input rank", 4, ishape.len())),
        };
        if channels != 1 {
            return Err(Error::dim("conv2d input channels", 1, channels));
        }
        let kshape = self.value(kernels).shape().to_vec();
        let [kh, kw, kc, filters] = kshape[..] else {
            return Err(Error::dim("conv2d kernel rank", 4, kshape.len()));
        };
        if kc != 1 {
            return Err(Error::dim("conv2d kernel channels", 1, kc));
        }
        if kh > height {
            return Err(Error::dim("conv2d kernel height", height, kh));
        }
        if kw > width {
            return Err(Error::dim("conv2d kernel width", width, kw));
        }
        let blen = self.value(bias).len();
        if blen != filters {
            return Err(Error::dim("conv2d bias", filters, blen));
        }
        let geom = ConvGeometry {
            batch,
            height,
            width,
            kernel_h: kh,
            kernel_w: kw,
            filters,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).values(),
            self.value(kernels).values(),
            self.value(bias).values(),
        );
        let shape = if batched {
            vec![batch, geom.out_h(), geom.out_w(), filters]
        } else {
            vec![geom.out_h(), geom.out_w(), filters]
        };
        let rg = self.rg(&[input, kernels, bias]);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Batch normalization of the columns of a `B×D` matrix.
    ///
    /// In training mode the batch statistics are used (and differentiated
    /// through) and the running statistics in `state` are updated as
    /// `running = momentum·running + (1-momentum)·batch`. In inference mode
    /// the running statistics are used as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        training: bool,
    ) -> Result<Var> {
        let (rows, d) = matrix_dims(self.value(x), "batch_norm input")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).len() != d {
                return Err(Error::dim(
                    format!("batch_norm {name}"),
                    d,
                    self.value(v).len(),
                ));
            }
        }
        if state.running_mean.len() != d || state.running_var.len() != d {
            return Err(Error::dim("batch_norm state", d, state.running_mean.len()));
        }
        if training && rows < 2 {
            return Err(Error::DegenerateBatch { rows });
        }
        let xv = self.value(x).values();
        let (mean, var) = if training {
            column_moments(xv, rows, d)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let g = self.value(gamma).values();
        let b = self.value(beta).values();
        let mut xhat = vec![0.0; rows * d];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            for j in 0..d {
                let h = (xv[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        if training {
            let mo = state.momentum;
            for j in 0..d {
                state.running_mean[j] = mo * state.running_mean[j] + (1.0 - mo) * mean[j];
                state.running_var[j] = mo * state.running_var[j] + (1.0 - mo) * var[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(&[rows, d], out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: training,
            },
            rg,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` so inference is
    /// the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape(),
            xv.values().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        )?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Row-wise softmax of an `m×n` matrix.
    pub fn softmax(&mut self, src: Var) -> Result<Var> {
        let (_, n) = matrix_dims(self.value(src), "softmax")?;
        let mut out = self.value(src).clone();
        for row in out.values_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let rg = self.rg(&[src]);
        Ok(self.push(out, Op::Softmax(src), rg))
    }

    /// Column `col` of an `m×n` matrix as a length-`m` vector.
    pub fn select_col(&mut self, src: Var, col: usize) -> Result<Var> {
        let (m, n) = matrix_dims(self.value(src), "select_col")?;
        if col >= n {
            return Err(Error::dim("column", n, col + 1));
        }
        let out: Vec<f64> = self.value(src).values().chunks(n).map(|r| r[col]).collect();
        let rg = self.rg(&[src]);
        Ok(self.push(Tensor::new(&[m], out)?, Op::SelectCol { src, col }, rg))
    }

    pub fn sum(&mut self, src: Var) -> Var {
        let s = self.value(src).sum();
        let rg = self.rg(&[src]);
        self.push(Tensor::scalar(s), Op::Sum(src), rg)
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets, with
    /// optional per-sample weights (the mean still divides by the sample count).
    pub fn bce_loss(
        &mut self,
        probs: Var,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let pv = self.value(probs).values();
        if targets.is_empty() {
            return Err(Error::Argument("bce_loss on an empty batch".into()));
        }
        if pv.len() != targets.len() {
            return Err(Error::dim("bce targets", pv.len(), targets.len()));
        }
        let weights = match weights {
            Some(w) if w.len() != targets.len() => {
                return Err(Error::dim("bce weights", targets.len(), w.len()))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; targets.len()],
        };
        let loss = weighted_bce(pv, targets, &weights);
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                weights,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        if !out.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Tensor::filled(out.value.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot =
            grads[var.0].get_or_insert_with(|| Tensor::zeros(self.nodes[var.0].value.shape()));
        f(slot.values_mut());
    }

    fn add_into(&self, grads: &mut [Option<Tensor>], var: Var, src: &[f64]) {
        self.accumulate(grads, var, |dst| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        });
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gv = g.values();
        let y = node.value.values();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let ga = kernels::matmul_b_t(gv, self.value(*b).values(), m, k, n);
                    self.add_into(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    let gb = kernels::matmul_a_t(self.value(*a).values(), gv, m, k, n);
                    self.add_into(grads, *b, &gb);
                }
            }
            Op::AddRow(a, bias) => {
                self.add_into(grads, *a, gv);
                let n = self.value(*bias).len();
                self.accumulate(grads, *bias, |dst| {
                    for row in gv.chunks(n) {
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.add_into(grads, *a, gv);
                self.add_into(grads, *b, gv);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                self.accumulate(grads, *a, |dst| {
                    for ((d, s), o) in dst.iter_mut().zip(gv).zip(bv) {
                        *d += s * o;
                    }
                });
                self.accumulate(grads, *b, |dst| {
                    for ((d, s), o) in dst.iter_mut().zip(gv).zip(av) {
                        *d += s * o;
                    }
                });
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, |dst| {
                for (d, s) in dst.iter_mut().zip(gv) {
                    *d += s * c;
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |dst| {
                for ((d, s), yv) in dst.iter_mut().zip(gv).zip(y) {
                    *d += s * yv * (1.0 - yv);
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |dst| {
                for ((d, s), yv) in dst.iter_mut().zip(gv).zip(y) {
                    *d += s * (1.0 - yv * yv);
                }
            }),
            Op::Relu(a) => {
                let xv = self.value(*a).values();
                self.accumulate(grads, *a, |dst| {
                    for ((d, s), xv) in dst.iter_mut().zip(gv).zip(xv) {
                        if *xv > 0.0 {
                            *d += s;
                        }
                    }
                })
            }
            Op::SliceCols { src, start } => {
                let n = self.value(*src).shape()[1];
                let len = node.value.shape()[1];
                self.accumulate(grads, *src, |dst| {
                    for (drow, grow) in dst.chunks_mut(n).zip(gv.chunks(len)) {
                        for (d, s) in drow[*start..*start + len].iter_mut().zip(grow) {
                            *d += s;
                        }
                    }
                })
            }
            Op::Reshape(src) => self.add_into(grads, *src, gv),
            Op::TakeStep { src, step } => {
                let s = self.value(*src).shape();
                let (t, d) = (s[1], s[2]);
                self.accumulate(grads, *src, |dst| {
                    for (b, grow) in gv.chunks(d).enumerate() {
                        let o = (b * t + step) * d;
                        for (dv, sv) in dst[o..o + d].iter_mut().zip(grow) {
                            *dv += sv;
                        }
                    }
                })
            }
            Op::Conv2d {
                input,
                kernels: k,
                bias,
                geom,
            } => {
                if self.requires_grad(*input) {
                    let gi = kernels::conv2d_grad_input(geom, gv, self.value(*k).values());
                    self.add_into(grads, *input, &gi);
                }
                if self.requires_grad(*k) || self.requires_grad(*bias) {
                    let (gk, gb) =
                        kernels::conv2d_grad_params(geom, self.value(*input).values(), gv);
                    self.add_into(grads, *k, &gk);
                    self.add_into(grads, *bias, &gb);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = inv_std.len();
                let rows = xhat.len() / d;
                let gam = self.value(*gamma).values();
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for r in 0..rows {
                    for j in 0..d {
                        sum_g[j] += gv[r * d + j];
                        sum_gx[j] += gv[r * d + j] * xhat[r * d + j];
                    }
                }
                self.add_into(grads, *gamma, &sum_gx);
                self.add_into(grads, *beta, &sum_g);
                let nf = rows as f64;
                self.accumulate(grads, *x, |dst| {
                    for r in 0..rows {
                        for j in 0..d {
                            let idx = r * d + j;
                            let scale = gam[j] * inv_std[j];
                            if *batch_stats {
                                dst[idx] +=
                                    scale * (gv[idx] - sum_g[j] / nf - xhat[idx] * sum_gx[j] / nf);
                            } else {
                                dst[idx] += scale * gv[idx];
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => self.accumulate(grads, *x, |dst| {
                for ((d, s), m) in dst.iter_mut().zip(gv).zip(mask) {
                    *d += s * m;
                }
            }),
            Op::Softmax(src) => {
                let n = node.value.shape()[1];
                self.accumulate(grads, *src, |dst| {
                    for ((drow, grow), prow) in dst.chunks_mut(n).zip(gv.chunks(n)).zip(y.chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(prow).map(|(a, b)| a * b).sum();
                        for ((d, gq), p) in drow.iter_mut().zip(grow).zip(prow) {
                            *d += p * (gq - dot);
                        }
                    }
                })
            }
            Op::SelectCol { src, col } => {
                let n = self.value(*src).shape()[1];
                self.accumulate(grads, *src, |dst| {
                    for (r, s) in gv.iter().enumerate() {
                        dst[r * n + col] += s;
                    }
                })
            }
            Op::Sum(src) => self.accumulate(grads, *src, |dst| {
                for d in dst.iter_mut() {
                    *d += gv[0];
                }
            }),
            Op::Bce {
                probs,
                targets,
                weights,
            } => {
                let pv = self.value(*probs).values();
                let s = targets.len() as f64;
                self.accumulate(grads, *probs, |dst| {
                    for i in 0..targets.len() {
                        let p = pv[i];
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            continue;
                        }
                        let y = targets[i];
                        dst[i] += -gv[0] * weights[i] / s * (y / p - (1.0 - y) / (1.0 - p));
                    }
                })
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Per-column mean and biased variance. Values are shifted by the first row
/// before summing, so a constant column gets exactly its value as mean and
/// exactly zero variance.
fn column_moments(x: &[f64], rows: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = rows as f64;
    let shift = &x[..d];
    let mut mean = vec![0.0; d];
    for row in x.chunks(d) {
        for j in 0..d {
            mean[j] += row[j] - shift[j];
        }
    }
    for j in 0..d {
        mean[j] = shift[j] + mean[j] / nf;
    }
    let mut var = vec![0.0; d];
    for row in x.chunks(d) {
        for j in 0..d {
            let c = row[j] - mean[j];
            var[j] += c * c;
        }
    }
    for v in var.iter_mut() {
        *v /= nf;
    }
    (mean, var)
}

/// Binary cross-entropy `-(1/S) Σ [y log ŷ + (1-y) log(1-ŷ)]` with
/// `ŷ` clamped to `[BCE_EPS, 1-BCE_EPS]`.
pub fn bce_loss(probs: &[f64], targets: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Argument("bce_loss on an empty batch".into()));
    }
    if probs.len() != targets.len() {
        return Err(Error::dim("bce targets", probs.len(), targets.len()));
    }
    Ok(weighted_bce(probs, targets, &vec![1.0; probs.len()]))
}

fn weighted_bce(probs: &[f64], targets: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((&p, &y), &w)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    -total / probs.len() as f64
}
