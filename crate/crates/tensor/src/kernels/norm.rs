//! Softmax, layer normalization, and the folded per-channel affine used by
//! the convolutional blocks.

use crate::error::{Result, TensorError};
use crate::parallel::for_each_chunk;
use crate::tensor::{Element, Tensor};

/// Numerically stabilized softmax along `axis` (max subtraction per lane).
pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange {
            op: "softmax",
            axis,
            rank: x.rank(),
        });
    }
    let mut out = x.data().to_vec();
    let lane = x.shape()[axis];
    if axis == x.rank() - 1 {
        for_each_chunk(&mut out, lane, |_, row| softmax_lane(row));
    } else {
        let stride: usize = x.shape()[axis + 1..].iter().product();
        let outer: usize = x.shape()[..axis].iter().product();
        let mut buf = vec![T::ZERO; lane];
        for o in 0..outer {
            for i in 0..stride {
                let base = o * lane * stride + i;
                for l in 0..lane {
                    buf[l] = out[base + l * stride];
                }
                softmax_lane(&mut buf);
                for l in 0..lane {
                    out[base + l * stride] = buf[l];
                }
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

fn softmax_lane<T: Element>(row: &mut [T]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.maximum(v);
    }
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Gradient of softmax from its output `y`: `gx = y * (g - sum(g * y))` per lane.
pub fn softmax_backward<T: Element>(y: &Tensor<T>, grad: &Tensor<T>, axis: usize) -> Tensor<T> {
    let lane = y.shape()[axis];
    let yd = y.data();
    let gd = grad.data();
    let mut gx = vec![T::ZERO; yd.len()];
    if axis == y.rank() - 1 {
        for_each_chunk(&mut gx, lane, |li, gx_row| {
            let base = li * lane;
            let mut dot = T::ZERO;
            for l in 0..lane {
                dot += gd[base + l] * yd[base + l];
            }
            for (l, v) in gx_row.iter_mut().enumerate() {
                *v = yd[base + l] * (gd[base + l] - dot);
            }
        });
    } else {
        let stride: usize = y.shape()[axis + 1..].iter().product();
        let outer: usize = y.shape()[..axis].iter().product();
        for o in 0..outer {
            for i in 0..stride {
                let base = o * lane * stride + i;
                let mut dot = T::ZERO;
                for l in 0..lane {
                    dot += gd[base + l * stride] * yd[base + l * stride];
                }
                for l in 0..lane {
                    let idx = base + l * stride;
                    gx[idx] = yd[idx] * (gd[idx] - dot);
                }
            }
        }
    }
    Tensor::from_vec(y.shape(), gx).expect("gx shape")
}

/// Layer normalization over the last axis with per-feature affine.
///
/// Uses the biased variance; `eps` guards the zero-variance case.
pub fn layernorm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let d = *x.shape().last().expect("rank >= 1");
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(TensorError::ShapeMismatch {
            op: "layernorm",
            context: "gamma/beta must match the last axis",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    if eps <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "layernorm",
            reason: "eps must be positive".into(),
        });
    }
    let eps = T::from_f64(eps);
    let inv_d = T::from_f64(1.0 / d as f64);
    let gam = gamma.data();
    let bet = beta.data();
    let xd = x.data();
    let mut out = vec![T::ZERO; xd.len()];
    for_each_chunk(&mut out, d, |li, row| {
        let lane = &xd[li * d..(li + 1) * d];
        let (mean, inv_std) = lane_stats(lane, inv_d, eps);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (lane[j] - mean) * inv_std * gam[j] + bet[j];
        }
    });
    Tensor::from_vec(x.shape(), out)
}

fn lane_stats<T: Element>(lane: &[T], inv_d: T, eps: T) -> (T, T) {
    let mut mean = T::ZERO;
    for &v in lane {
        mean += v;
    }
    mean = mean * inv_d;
    let mut var = T::ZERO;
    for &v in lane {
        let c = v - mean;
        var += c * c;
    }
    var = var * inv_d;
    (mean, T::ONE / (var + eps).sqrt())
}

/// Gradients of `layernorm` with respect to `x`, `gamma`, `beta`.
pub fn layernorm_backward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    eps: f64,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = *x.shape().last().expect("rank >= 1");
    let lanes = x.numel() / d;
    let eps = T::from_f64(eps);
    let inv_d = T::from_f64(1.0 / d as f64);
    let gam = gamma.data();
    let xd = x.data();
    let gd = grad.data();

    let mut gx = vec![T::ZERO; xd.len()];
    for_each_chunk(&mut gx, d, |li, gx_row| {
        let lane = &xd[li * d..(li + 1) * d];
        let g_lane = &gd[li * d..(li + 1) * d];
        let (mean, inv_std) = lane_stats(lane, inv_d, eps);
        // gx = inv_std * (gh - mean(gh) - xhat * mean(gh * xhat)), gh = g * gamma
        let mut m1 = T::ZERO;
        let mut m2 = T::ZERO;
        for j in 0..d {
            let gh = g_lane[j] * gam[j];
            let xhat = (lane[j] - mean) * inv_std;
            m1 += gh;
            m2 += gh * xhat;
        }
        m1 = m1 * inv_d;
        m2 = m2 * inv_d;
        for (j, v) in gx_row.iter_mut().enumerate() {
            let gh = g_lane[j] * gam[j];
            let xhat = (lane[j] - mean) * inv_std;
            *v = inv_std * (gh - m1 - xhat * m2);
        }
    });

    let mut ggamma = vec![T::ZERO; d];
    let mut gbeta = vec![T::ZERO; d];
    for li in 0..lanes {
        let lane = &xd[li * d..(li + 1) * d];
        let g_lane = &gd[li * d..(li + 1) * d];
        let (mean, inv_std) = lane_stats(lane, inv_d, eps);
        for j in 0..d {
            ggamma[j] += g_lane[j] * (lane[j] - mean) * inv_std;
            gbeta[j] += g_lane[j];
        }
    }

    (
        Tensor::from_vec(x.shape(), gx).expect("gx shape"),
        Tensor::from_vec(&[d], ggamma).expect("ggamma shape"),
        Tensor::from_vec(&[d], gbeta).expect("gbeta shape"),
    )
}

/// Folded per-channel normalization for `[C,H,W]` maps: `y_c = x_c * gamma_c + beta_c`.
///
/// Batch-independent and pointwise, so convolutional blocks built on it keep
/// strict spatial locality.
pub fn channel_affine<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "channel_affine",
            context: "input must be [C,H,W]",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    }
    let c = x.shape()[0];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "channel_affine",
            context: "gamma/beta must be [C]",
            lhs: vec![c],
            rhs: gamma.shape().to_vec(),
        });
    }
    let plane = x.shape()[1] * x.shape()[2];
    let gam = gamma.data();
    let bet = beta.data();
    let xd = x.data();
    let mut out = vec![T::ZERO; xd.len()];
    for_each_chunk(&mut out, plane, |ci, row| {
        let base = ci * plane;
        for (i, v) in row.iter_mut().enumerate() {
            *v = xd[base + i] * gam[ci] + bet[ci];
        }
    });
    Tensor::from_vec(x.shape(), out)
}

pub fn channel_affine_backward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = x.shape()[0];
    let plane = x.shape()[1] * x.shape()[2];
    let gam = gamma.data();
    let xd = x.data();
    let gd = grad.data();

    let mut gx = vec![T::ZERO; xd.len()];
    for_each_chunk(&mut gx, plane, |ci, row| {
        let base = ci * plane;
        for (i, v) in row.iter_mut().enumerate() {
            *v = gd[base + i] * gam[ci];
        }
    });
    let mut ggamma = vec![T::ZERO; c];
    let mut gbeta = vec![T::ZERO; c];
    for ci in 0..c {
        let base = ci * plane;
        for i in 0..plane {
            ggamma[ci] += gd[base + i] * xd[base + i];
            gbeta[ci] += gd[base + i];
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("gx shape"),
        Tensor::from_vec(&[c], ggamma).expect("ggamma shape"),
        Tensor::from_vec(&[c], gbeta).expect("gbeta shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::<f64>::zeros(&[5]);
        let y = softmax(&x, 0).unwrap();
        for &v in y.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_magnitude_does_not_overflow() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1e4, 0.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = Tensor::<f64>::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let shifted = x.map(|v| v + 37.5);
        let a = softmax(&x, 0).unwrap();
        let b = softmax(&shifted, 0).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_axis_out_of_range() {
        let x = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(
            softmax(&x, 2),
            Err(TensorError::AxisOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_non_last_axis_matches_transposed() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64 * 0.7).sin());
        let along_rows = softmax(&x, 0).unwrap();
        // Column j of along_rows should be the softmax of column j.
        for j in 0..4 {
            let col = Tensor::<f64>::from_vec(&[3], (0..3).map(|i| x.data()[i * 4 + j]).collect())
                .unwrap();
            let sm = softmax(&col, 0).unwrap();
            for i in 0..3 {
                assert!((along_rows.data()[i * 4 + j] - sm.data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layernorm_constant_lane_is_zero() {
        let x = Tensor::<f64>::filled(&[2, 4], 7.0);
        let gamma = Tensor::<f64>::filled(&[4], 1.0);
        let beta = Tensor::<f64>::zeros(&[4]);
        let y = layernorm(&x, &gamma, &beta, 1e-5).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_scale_invariant() {
        let x = Tensor::<f64>::from_vec(&[1, 4], vec![0.1, -0.7, 1.3, 0.4]).unwrap();
        let gamma = Tensor::<f64>::filled(&[4], 1.0);
        let beta = Tensor::<f64>::zeros(&[4]);
        let a = layernorm(&x, &gamma, &beta, 1e-10).unwrap();
        let b = layernorm(&x.map(|v| v * 31.0), &gamma, &beta, 1e-10).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn layernorm_matches_direct_formula() {
        let x = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 4.0]).unwrap();
        let gamma = Tensor::<f64>::from_vec(&[3], vec![2.0, 1.0, 0.5]).unwrap();
        let beta = Tensor::<f64>::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let eps = 1e-5;
        let y = layernorm(&x, &gamma, &beta, eps).unwrap();
        let mean = 7.0 / 3.0;
        let var = ((1.0f64 - mean).powi(2) + (2.0 - mean).powi(2) + (4.0 - mean).powi(2)) / 3.0;
        for j in 0..3 {
            let xhat = (x.data()[j] - mean) / (var + eps).sqrt();
            let want = xhat * gamma.data()[j] + beta.data()[j];
            assert!((y.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_affine_identity_under_unit_params() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3], |i| (i as f64).cos());
        let gamma = Tensor::<f64>::filled(&[2], 1.0);
        let beta = Tensor::<f64>::zeros(&[2]);
        let y = channel_affine(&x, &gamma, &beta).unwrap();
        assert_eq!(y.data(), x.data());
    }
}
