use crate::error::{Error, Result};
use crate::model::EmotionModel;
use crate::tensor::Tensor;

/// A scalar function of one sample, differentiable in its input.
pub trait AttributionTarget: Sync {
    /// `F(x)` for each input.
    fn evaluate(&self, inputs: &[Tensor]) -> Result<Vec<f64>>;

    /// `F(x)` and `∂F/∂x` (shaped like `x`) for each input.
    fn evaluate_with_gradients(&self, inputs: &[Tensor]) -> Result<Vec<(f64, Tensor)>>;
}

/// Positive-class probability in inference mode.
impl AttributionTarget for EmotionModel {
    fn evaluate(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        self.predict_batch(inputs)
    }

    fn evaluate_with_gradients(&self, inputs: &[Tensor]) -> Result<Vec<(f64, Tensor)>> {
        self.input_gradients(inputs)
    }
}

/// `F(x) = Σ wᵢxᵢ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTarget {
    pub weights: Tensor,
    pub bias: f64,
}

impl LinearTarget {
    pub fn new(weights: Tensor, bias: f64) -> Self {
        Self { weights, bias }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.weights.shape() {
            return Err(Error::shape(
                "linear target input",
                self.weights.shape(),
                x.shape(),
            ));
        }
        Ok(())
    }
}

impl AttributionTarget for LinearTarget {
    fn evaluate(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        inputs
            .iter()
            .map(|x| {
                self.check(x)?;
                let dot: f64 = x
                    .values()
                    .iter()
                    .zip(self.weights.values())
                    .map(|(a, w)| a * w)
                    .sum();
                Ok(dot + self.bias)
            })
            .collect()
    }

    fn evaluate_with_gradients(&self, inputs: &[Tensor]) -> Result<Vec<(f64, Tensor)>> {
        let values = self.evaluate(inputs)?;
        Ok(values
            .into_iter()
            .map(|v| (v, self.weights.clone()))
            .collect())
    }
}

/// `G(x) = F(x / c)`.
#[derive(Debug, Clone)]
pub struct ScaledInput<T> {
    pub inner: T,
    pub scale: f64,
}

impl<T: AttributionTarget> ScaledInput<T> {
    pub fn new(inner: T, scale: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Argument(format!(
                "input scale must be finite and non-zero, got {scale}"
            )));
        }
        Ok(Self { inner, scale })
    }

    fn unscale(&self, inputs: &[Tensor]) -> Vec<Tensor> {
        inputs.iter().map(|x| x.scale(1.0 / self.scale)).collect()
    }
}

impl<T: AttributionTarget> AttributionTarget for ScaledInput<T> {
    fn evaluate(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        self.inner.evaluate(&self.unscale(inputs))
    }

    fn evaluate_with_gradients(&self, inputs: &[Tensor]) -> Result<Vec<(f64, Tensor)>> {
        let out = self.inner.evaluate_with_gradients(&self.unscale(inputs))?;
        Ok(out
            .into_iter()
            .map(|(v, g)| (v, g.scale(1.0 / self.scale)))
            .collect())
    }
}
