//! Batched matrix multiplication.
//!
//! Accepts rank-2 operands or rank-3 operands with equal leading batch
//! dimensions. Each output element accumulates over the inner dimension in
//! ascending index order, so results are reproducible bit-for-bit and match
//! a naive triple loop exactly.

use crate::error::{Result, TensorError};
use crate::parallel::for_each_chunk;
use crate::tensor::{Element, Tensor};

fn split_dims(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let batch: usize = shape[..r - 2].iter().product();
    (batch, shape[r - 2], shape[r - 1])
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            context: "operands must share rank >= 2",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (batch_a, m, ka) = split_dims(a.shape());
    let (batch_b, kb, n) = split_dims(b.shape());
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            context: "inner dimensions must agree",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if batch_a != batch_b || a.shape()[..a.rank() - 2] != b.shape()[..b.rank() - 2] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            context: "leading batch dimensions must agree",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let k = ka;
    let mut out_shape = a.shape()[..a.rank() - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);

    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::ZERO; batch_a * m * n];
    // One task per output row (bi, i).
    for_each_chunk(&mut out, n, |row, out_row| {
        let bi = row / m;
        let i = row % m;
        let a_row = &ad[bi * m * k + i * k..bi * m * k + (i + 1) * k];
        let b_mat = &bd[bi * k * n..(bi + 1) * k * n];
        for (j, out_v) in out_row.iter_mut().enumerate() {
            let mut acc = T::ZERO;
            for (l, &a_v) in a_row.iter().enumerate() {
                acc += a_v * b_mat[l * n + j];
            }
            *out_v = acc;
        }
    });
    Tensor::from_vec(&out_shape, out)
}

/// Gradients of `matmul`: `ga = g . b^T`, `gb = a^T . g` per batch slice.
pub fn matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (_, m, k) = split_dims(a.shape());
    let (_, _, n) = split_dims(b.shape());
    let ad = a.data();
    let bd = b.data();
    let gd = grad.data();

    let mut ga = vec![T::ZERO; ad.len()];
    for_each_chunk(&mut ga, k, |row, ga_row| {
        let bi = row / m;
        let i = row % m;
        let g_row = &gd[bi * m * n + i * n..bi * m * n + (i + 1) * n];
        let b_mat = &bd[bi * k * n..(bi + 1) * k * n];
        for (l, ga_v) in ga_row.iter_mut().enumerate() {
            let mut acc = T::ZERO;
            for (j, &g_v) in g_row.iter().enumerate() {
                acc += g_v * b_mat[l * n + j];
            }
            *ga_v = acc;
        }
    });

    let mut gb = vec![T::ZERO; bd.len()];
    for_each_chunk(&mut gb, n, |row, gb_row| {
        let bi = row / k;
        let l = row % k;
        let a_mat = &ad[bi * m * k..(bi + 1) * m * k];
        let g_mat = &gd[bi * m * n..(bi + 1) * m * n];
        for (j, gb_v) in gb_row.iter_mut().enumerate() {
            let mut acc = T::ZERO;
            for i in 0..m {
                acc += a_mat[i * k + l] * g_mat[i * n + j];
            }
            *gb_v = acc;
        }
    });

    (
        Tensor::from_vec(a.shape(), ga).expect("ga shape"),
        Tensor::from_vec(b.shape(), gb).expect("gb shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix_is_matrix() {
        let eye = Tensor::<f64>::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let b = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64) * 0.5 - 2.0);
        let out = matmul(&eye, &b).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn zeros_times_anything_is_zero() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64 + 1.0);
        let out = matmul(&a, &b).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_dimension_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        assert!(matches!(
            matmul(&a, &b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn batch_dimension_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(&[2, 2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 3, 4]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn batched_matches_per_slice() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 3], |i| (i as f64).sin());
        let b = Tensor::<f64>::from_fn(&[2, 3, 2], |i| (i as f64).cos());
        let full = matmul(&a, &b).unwrap();
        for bi in 0..2 {
            let a_s =
                Tensor::from_vec(&[2, 3], a.data()[bi * 6..(bi + 1) * 6].to_vec()).unwrap();
            let b_s =
                Tensor::from_vec(&[3, 2], b.data()[bi * 6..(bi + 1) * 6].to_vec()).unwrap();
            let part = matmul(&a_s, &b_s).unwrap();
            assert_eq!(&full.data()[bi * 4..(bi + 1) * 4], part.data());
        }
    }
}
