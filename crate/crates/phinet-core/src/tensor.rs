use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::CoreError;

/// Element type for tensors: f32 in production, f64 in gradient-check mode.
pub trait Scalar: Float + core::fmt::Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor (last index fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, CoreError> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(CoreError::ShapeMismatch(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        if n != data.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// The five extents of an N×C×D×H×W activation.
    pub fn dims5(&self) -> Result<[usize; 5], CoreError> {
        match *self.shape.as_slice() {
            [n, c, d, h, w] => Ok([n, c, d, h, w]),
            _ => Err(CoreError::ShapeMismatch(format!(
                "expected rank-5 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2], CoreError> {
        match *self.shape.as_slice() {
            [n, m] => Ok([n, m]),
            _ => Err(CoreError::ShapeMismatch(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims1(&self) -> Result<usize, CoreError> {
        match *self.shape.as_slice() {
            [n] => Ok(n),
            _ => Err(CoreError::ShapeMismatch(format!(
                "expected rank-1 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }

    /// Elementwise accumulate. Shapes must agree; violations are bugs, not
    /// recoverable conditions.
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "accumulation shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale_in_place(&mut self, factor: S) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }
}
