//! Reductions: full sum, spatial mean, and the softmax cross-entropy loss
//! used by the toy training head.

use crate::error::{Result, TensorError};
use crate::tensor::{Element, Tensor};

/// Sum of all elements as a `[1]` tensor.
pub fn sum_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::ZERO;
    for &v in x.data() {
        acc += v;
    }
    Tensor::scalar(acc)
}

pub fn sum_all_backward<T: Element>(in_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    Tensor::filled(in_shape, grad.scalar_value())
}

/// Global average pool: `[C, H, W] -> [C]`.
pub fn mean_spatial<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "mean_spatial",
            context: "input must be [C, H, W]",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (c, plane) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
    let inv = T::from_f64(1.0 / plane as f64);
    let xd = x.data();
    let out = (0..c)
        .map(|ci| {
            let mut acc = T::ZERO;
            for &v in &xd[ci * plane..(ci + 1) * plane] {
                acc += v;
            }
            acc * inv
        })
        .collect();
    Tensor::from_vec(&[c], out)
}

pub fn mean_spatial_backward<T: Element>(in_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let plane = in_shape[1] * in_shape[2];
    let inv = T::from_f64(1.0 / plane as f64);
    let gd = grad.data();
    let mut gx = vec![T::ZERO; in_shape.iter().product()];
    for (i, v) in gx.iter_mut().enumerate() {
        *v = gd[i / plane] * inv;
    }
    Tensor::from_vec(in_shape, gx).expect("gx shape")
}

/// Mean softmax cross-entropy over rows of `logits` (`[N, K]`) against
/// integer class targets. Stabilized through log-sum-exp.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            context: "logits must be [N, K]",
            lhs: logits.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != n {
        return Err(TensorError::InvalidArgument {
            op: "softmax_cross_entropy",
            reason: format!("{} targets for {} rows", targets.len(), n),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(TensorError::InvalidArgument {
            op: "softmax_cross_entropy",
            reason: format!("target class {bad} out of range 0..{k}"),
        });
    }
    let ld = logits.data();
    let mut acc = T::ZERO;
    for (i, &target) in targets.iter().enumerate() {
        let row = &ld[i * k..(i + 1) * k];
        let mut max = row[0];
        for &v in row {
            max = max.maximum(v);
        }
        let mut sum = T::ZERO;
        for &v in row {
            sum += (v - max).exp();
        }
        // log-sum-exp(row) - row[target]
        let lse = max + T::from_f64(sum.to_f64().ln());
        acc += lse - row[target];
    }
    Ok(Tensor::scalar(acc * T::from_f64(1.0 / n as f64)))
}

/// Gradient of the mean cross-entropy: `(softmax(row) - onehot(target)) / N`.
pub fn softmax_cross_entropy_backward<T: Element>(
    logits: &Tensor<T>,
    targets: &[usize],
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let g = grad.scalar_value() * T::from_f64(1.0 / n as f64);
    let ld = logits.data();
    let mut gx = vec![T::ZERO; ld.len()];
    for (i, &target) in targets.iter().enumerate() {
        let row = &ld[i * k..(i + 1) * k];
        let mut max = row[0];
        for &v in row {
            max = max.maximum(v);
        }
        let mut sum = T::ZERO;
        for &v in row {
            sum += (v - max).exp();
        }
        for j in 0..k {
            let p = (row[j] - max).exp() / sum;
            let indicator = if j == target { T::ONE } else { T::ZERO };
            gx[i * k + j] = (p - indicator) * g;
        }
    }
    Tensor::from_vec(logits.shape(), gx).expect("gx shape")
}
