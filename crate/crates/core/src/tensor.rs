//! Dense tensor and named trainable parameter.
//!
//! Tensors are row-major over an explicit shape; feature maps use
//! channel-height-width (C×H×W) order. The element type is generic over
//! [`Scalar`] so the same code runs in f32 (default) and f64 (gradient
//! checking) modes.

use crate::error::{Error, Result};
use crate::memtrack;
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense N-dimensional array, row-major.
#[derive(Debug)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and matching row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Self::from_parts(shape, data))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n: usize = shape.iter().product();
        Self::from_parts(shape, vec![v; n])
    }

    /// 0-dimensional tensor holding one value.
    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![], vec![v])
    }

    /// Samples from N(mean, std²), consumed in a fixed order from `rng`.
    pub fn randn<R: Rng>(shape: Vec<usize>, mean: f64, std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(mean + std * z)
            })
            .collect();
        Self::from_parts(shape, data)
    }

    /// Samples uniformly from [lo, hi).
    pub fn rand_uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(rng.random_range(lo..hi))).collect();
        Self::from_parts(shape, data)
    }

    fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        memtrack::on_alloc(data.len() * T::BYTES);
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor with {} elements (shape {:?})",
                self.data.len(),
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Interpret as (C, H, W); `op` names the caller in the error.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(op, format!("expected C×H×W tensor, got shape {:?}", self.shape))),
        }
    }

    /// Interpret as (H, W).
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::shape(op, format!("expected H×W tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Convert elements through f64 into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        )
    }

    /// Same shape, with a different data buffer.
    pub(crate) fn like(&self, data: Vec<T>) -> Tensor<T> {
        debug_assert_eq!(data.len(), self.data.len());
        Self::from_parts(self.shape.clone(), data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Bit-exact equality of shape and every element.
    pub fn bits_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self.data.iter().zip(&other.data).all(|(a, b)| a.bits() == b.bits())
    }

    /// Largest absolute element difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self::from_parts(self.shape.clone(), self.data.clone())
    }
}

impl<T: Scalar> Drop for Tensor<T> {
    fn drop(&mut self) {
        memtrack::on_free(self.data.len() * T::BYTES);
    }
}

/// Named trainable tensor with an accumulated gradient of identical shape.
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter { name: name.into(), value, grad }
    }

    pub fn count(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = T::ZERO;
        }
    }

    /// Add a gradient contribution (accumulates across backward calls).
    pub fn accumulate_grad(&mut self, g: &Tensor<T>) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("parameter {}: {:?} vs {:?}", self.name, self.value.shape(), g.shape()),
            ));
        }
        for (dst, src) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *dst += *src;
        }
        Ok(())
    }
}
