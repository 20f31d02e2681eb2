//! Dense row-major tensors over `f32` or `f64`.
//!
//! Rank is restricted to 1..=4 (enough for `[N, C, H, W]` feature maps and
//! everything below them) and every dimension must be positive, so
//! `product(shape) == data.len()` always holds.

use std::fmt;

use crate::error::{Result, TensorError};

/// Element type tag used by the binary serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

/// Scalar element of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Element:
    Copy
    + PartialOrd
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
{
    const DTYPE: DType;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn erf(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
    /// Size of one element in the serialized form.
    fn byte_width() -> usize;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes per f32"))
    }
    fn byte_width() -> usize {
        4
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes per f64"))
    }
    fn byte_width() -> usize {
        8
    }
}

pub const MAX_RANK: usize = 4;

/// Dense N-dimensional array in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>(shape={:?}", T::DTYPE, self.shape)?;
        if self.data.len() <= 8 {
            write!(f, ", data={:?})", self.data)
        } else {
            write!(f, ", numel={})", self.data.len())
        }
    }
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be between 1 and 4",
        });
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "all dimensions must be positive",
        });
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel = validate_shape(shape)?;
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "product(shape) != data length",
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = validate_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![T::ZERO; numel],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = validate_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at each flat index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel = validate_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar tensor.
    pub fn scalar_value(&self) -> T {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data reinterpreted under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel = validate_shape(shape)?;
        if numel != self.data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "reshape must preserve element count",
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts elements to another dtype through f64.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }
}

/// Largest absolute elementwise difference. Errors on shape mismatch.
pub fn max_abs_diff<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "max_abs_diff",
            context: "operands must have equal shape",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        let err = Tensor::<f64>::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::InvalidShape { .. }));
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn zero_dimension_rejected() {
        let err = Tensor::<f32>::from_vec(&[2, 0], vec![]).unwrap_err();
        assert!(matches!(err, TensorError::InvalidShape { .. }));
    }

    #[test]
    fn rank_limits_enforced() {
        assert!(Tensor::<f32>::from_vec(&[], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[1, 1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }
}
