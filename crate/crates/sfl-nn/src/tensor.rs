//! Dense row-major tensors, generic over the working precision.
//!
//! The engine runs everything in f32; f64 exists for the finite-difference
//! oracle tests where sharper tolerances are needed.

use num_traits::Float;
use std::fmt::{Debug, Display};

use crate::error::NnError;

/// Scalar type the engine is instantiated at: f32 (default) or f64 (oracle mode).
pub trait Real:
    Float + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense N-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Real = f32> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn new(dims: Vec<usize>, data: Vec<S>) -> Result<Self, NnError> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(NnError::BadTensor {
                dims: dims.clone(),
                len: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Tensor { dims, data: vec![S::zero(); n] }
    }

    pub fn full(dims: Vec<usize>, value: S) -> Self {
        let n: usize = dims.iter().product();
        Tensor { dims, data: vec![value; n] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { dims: vec![1], data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    /// Reinterpret with new dims; element count must match.
    pub fn reshaped(&self, dims: Vec<usize>) -> Result<Self, NnError> {
        Tensor::new(dims, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Squared L2 norm of all elements.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn to_f32_tensor(&self) -> Tensor<f32> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| x.as_f64() as f32).collect(),
        }
    }
}

/// a += b, elementwise. Dims must match.
pub fn add_assign<S: Real>(a: &mut Tensor<S>, b: &Tensor<S>) {
    debug_assert_eq!(a.dims(), b.dims());
    for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
        *x = *x + *y;
    }
}

/// a *= k, elementwise.
pub fn scale_assign<S: Real>(a: &mut Tensor<S>, k: S) {
    for x in a.data.iter_mut() {
        *x = *x * k;
    }
}
