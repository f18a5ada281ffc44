//! Dense n-dimensional arrays and the numeric kernels built on them.
//!
//! Storage is row-major. Feature maps are rank-3 tensors laid out as
//! rows × cols × channels, so the channel vector of one pixel is contiguous.
//! Every kernel here is a pure function of its arguments.

mod conv;
pub(crate) mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::{
    conv2d, conv2d_adjoint, conv2d_bias_grad, conv2d_kernel_grad, max_pool2x2,
    max_pool2x2_backward, transposed_conv2d, ConvSpec, Padding,
};
pub use ops::{activation, concat_channels, softmax_channels, Activation};

/// Storage precision tag, used by the model file format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Real scalar type a tensor can hold. Implemented for `f32` (training) and
/// `f64` (gradient checking).
pub trait Scalar:
    Float + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dense row-major array. `shape.iter().product() == data.len()` and every
/// extent is at least one.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(op: &'static str, shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape {
            op,
            shape: shape.to_vec(),
            reason: "extents must be non-empty and at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape("Tensor::new", &shape)?;
        if n != data.len() {
            return Err(Error::dim("Tensor::new", "data length", n, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = check_shape("Tensor::full", &shape).expect("valid shape");
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = check_shape("Tensor::from_fn", &shape).expect("valid shape");
        Tensor {
            shape,
            data: (0..n).map(f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape("reshape", &shape)?;
        if n != self.data.len() {
            return Err(Error::dim("reshape", "element count", self.data.len(), n));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Inner product accumulated in 64-bit.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "dot",
                shape: other.shape.clone(),
                reason: format!("expected {:?}", self.shape),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }

    /// `self += alpha * other`. Panics on shape mismatch.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    /// `self += other`. Panics on shape mismatch.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    /// Extents of a rank-3 feature map as (rows, cols, channels).
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape {
                op,
                shape: self.shape.clone(),
                reason: "expected a rows×cols×channels feature map".into(),
            }),
        }
    }

    /// Value at (row, col, channel) of a rank-3 map. Panics when out of range.
    pub fn at3(&self, row: usize, col: usize, ch: usize) -> T {
        let (_, w, c) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(row * w + col) * c + ch]
    }

    /// Channel vector of one pixel of a rank-3 map.
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let (w, c) = (self.shape[1], self.shape[2]);
        let start = (row * w + col) * c;
        &self.data[start..start + c]
    }

    /// Channels `[start, end)` of a rank-3 map.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let (h, w, c) = self.dims3("slice_channels")?;
        if start >= end || end > c {
            return Err(Error::Shape {
                op: "slice_channels",
                shape: self.shape.clone(),
                reason: format!("channel range {start}..{end} out of bounds"),
            });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(h * w * width);
        for px in self.data.chunks_exact(c) {
            data.extend_from_slice(&px[start..end]);
        }
        Ok(Tensor {
            shape: vec![h, w, width],
            data,
        })
    }
}
