//! Binary tensor serialization: a length-prefixed JSON header carrying shape
//! and dtype, followed by the flat data in little-endian order.
//!
//! Layout: `u64 LE header length | header JSON | elements LE`.

use std::io::{Read, Write};

use thiserror::Error;

use crate::tensor::{DType, Element, Tensor};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed tensor header: {0}")]
    Header(String),
    #[error("dtype mismatch: file holds {found}, caller expects {expected}")]
    DtypeMismatch { expected: DType, found: DType },
    #[error("truncated tensor data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("invalid tensor payload: {0}")]
    Invalid(#[from] crate::error::TensorError),
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    dtype: DType,
    shape: Vec<usize>,
}

pub fn write_tensor<T: Element, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<(), IoError> {
    let header = serde_json::to_vec(&Header {
        dtype: T::DTYPE,
        shape: t.shape().to_vec(),
    })
    .expect("header serializes");
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(t.numel() * T::byte_width());
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes_vec());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Header, IoError> {
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    if len == 0 || len > 1 << 20 {
        return Err(IoError::Header(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    serde_json::from_slice(&header).map_err(|e| IoError::Header(e.to_string()))
}

fn read_payload<T: Element, R: Read>(r: &mut R, shape: &[usize]) -> Result<Tensor<T>, IoError> {
    let numel: usize = shape.iter().product();
    let width = T::byte_width();
    let mut buf = vec![0u8; numel * width];
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => {
                return Err(IoError::Truncated {
                    expected: buf.len(),
                    got: filled,
                })
            }
            n => filled += n,
        }
    }
    let data = buf.chunks_exact(width).map(T::from_le_slice).collect();
    Ok(Tensor::from_vec(shape, data)?)
}

/// Reads a tensor whose dtype must match `T`.
pub fn read_tensor<T: Element, R: Read>(r: &mut R) -> Result<Tensor<T>, IoError> {
    let header = read_header(r)?;
    if header.dtype != T::DTYPE {
        return Err(IoError::DtypeMismatch {
            expected: T::DTYPE,
            found: header.dtype,
        });
    }
    read_payload(r, &header.shape)
}

/// A tensor of either supported dtype, for readers that inspect files.
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }
}

pub fn read_tensor_any<R: Read>(r: &mut R) -> Result<AnyTensor, IoError> {
    let header = read_header(r)?;
    match header.dtype {
        DType::F32 => Ok(AnyTensor::F32(read_payload(r, &header.shape)?)),
        DType::F64 => Ok(AnyTensor::F64(read_payload(r, &header.shape)?)),
    }
}

pub fn save_tensor<T: Element>(path: &std::path::Path, t: &Tensor<T>) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn load_tensor<T: Element>(path: &std::path::Path) -> Result<Tensor<T>, IoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f32_and_f64() {
        let t64 = Tensor::<f64>::from_fn(&[2, 3, 2], |i| (i as f64) * 0.25 - 1.0);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t64).unwrap();
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t64);

        let t32 = Tensor::<f32>::from_fn(&[5], |i| i as f32);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t32).unwrap();
        let back: Tensor<f32> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t32);
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let t = Tensor::<f32>::zeros(&[2]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let err = read_tensor::<f64, _>(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, IoError::DtypeMismatch { .. }));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let t = Tensor::<f64>::zeros(&[4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 5);
        let err = read_tensor::<f64, _>(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, IoError::Truncated { .. }));
    }

    #[test]
    fn dynamic_read_reports_dtype() {
        let t = Tensor::<f32>::zeros(&[3, 4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let any = read_tensor_any(&mut buf.as_slice()).unwrap();
        assert_eq!(any.dtype(), DType::F32);
        assert_eq!(any.shape(), &[3, 4]);
    }
}
