//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};

/// A dense tensor of 64-bit floats stored in row-major order.
///
/// `values.len()` always equals the product of `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Argument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim("tensor length", expected, values.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "vector tensors must be non-empty");
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.values.iter_mut().enumerate().for_each({
            let mut f = f;
            move |(i, v)| *v = f(i)
        });
        t
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.values[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.values[o] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.values.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("elementwise", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Returns `Err(Numerical)` naming `context` if any entry is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numerical(context.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.at(&[1, 2, 3]), 23.0);
        assert_eq!(t.at(&[0, 1, 0]), 4.0);
    }

    #[test]
    fn reshape_keeps_values() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64);
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.values(), t.values());
        assert!(t.reshape(&[4, 2]).is_err());
    }
}
