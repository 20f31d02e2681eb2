//! Pure data-movement kernels: permute, narrow, concat, the token/lattice
//! conversions (seq2img / img2seq), and patch extraction. All are lossless
//! rearrangements; their gradients are the inverse rearrangements.

use crate::error::{Result, TensorError};
use crate::tensor::{Element, Tensor};

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    if axes.len() != rank {
        return Err(TensorError::InvalidArgument {
            op: "permute",
            reason: format!("axes {axes:?} must have length {rank}"),
        });
    }
    let mut seen = vec![false; rank];
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                reason: format!("axes {axes:?} must be a permutation of 0..{rank}"),
            });
        }
        seen[a] = true;
    }
    let in_shape = x.shape();
    let in_strides = x.strides();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let mut out = vec![T::ZERO; x.numel()];
    let xd = x.data();

    // Walk output positions in order, computing the source index.
    let mut idx = vec![0usize; rank];
    for out_v in out.iter_mut() {
        let mut src = 0;
        for (k, &a) in axes.iter().enumerate() {
            src += idx[k] * in_strides[a];
        }
        *out_v = xd[src];
        for k in (0..rank).rev() {
            idx[k] += 1;
            if idx[k] < out_shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Tensor::from_vec(&out_shape, out)
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Slice of length `len` starting at `start` along `axis`.
pub fn narrow<T: Element>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(TensorError::AxisOutOfRange {
            op: "narrow",
            axis,
            rank: x.rank(),
        });
    }
    if len == 0 || start + len > x.shape()[axis] {
        return Err(TensorError::InvalidArgument {
            op: "narrow",
            reason: format!(
                "range {start}..{} out of bounds for axis of size {}",
                start + len,
                x.shape()[axis]
            ),
        });
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = len;
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let full = x.shape()[axis];
    let xd = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&xd[base..base + len * inner]);
    }
    Tensor::from_vec(&out_shape, out)
}

/// Gradient of `narrow`: scatter `grad` back into a zero tensor of the input shape.
pub fn narrow_backward<T: Element>(
    in_shape: &[usize],
    axis: usize,
    start: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let len = grad.shape()[axis];
    let inner: usize = in_shape[axis + 1..].iter().product();
    let outer: usize = in_shape[..axis].iter().product();
    let full = in_shape[axis];
    let gd = grad.data();
    let mut gx = vec![T::ZERO; in_shape.iter().product()];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        let src = o * len * inner;
        gx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
    }
    Tensor::from_vec(in_shape, gx).expect("gx shape")
}

/// Concatenates tensors along `axis`; all other dimensions must agree.
pub fn concat<T: Element>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
        op: "concat",
        reason: "at least one input required".into(),
    })?;
    if axis >= first.rank() {
        return Err(TensorError::AxisOutOfRange {
            op: "concat",
            axis,
            rank: first.rank(),
        });
    }
    let mut axis_total = 0;
    for p in parts {
        if p.rank() != first.rank() {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                context: "all inputs must share rank",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        for (d, (&a, &b)) in first.shape().iter().zip(p.shape()).enumerate() {
            if d != axis && a != b {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    context: "non-concat dimensions must agree",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        axis_total += p.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_total;
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let outer: usize = first.shape()[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * axis_total * inner);
    for o in 0..outer {
        for p in parts {
            let l = p.shape()[axis];
            let base = o * l * inner;
            out.extend_from_slice(&p.data()[base..base + l * inner]);
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// Token sequence `[N, d]` to channel-major lattice `[d, h, w]`;
/// token `i*w + j` lands on cell `(i, j)`.
pub fn seq2img<T: Element>(z: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if z.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "seq2img",
            context: "input must be [N, d]",
            lhs: z.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (n, d) = (z.shape()[0], z.shape()[1]);
    if n != h * w {
        return Err(TensorError::InvalidArgument {
            op: "seq2img",
            reason: format!("token count {n} != lattice {h}x{w}"),
        });
    }
    let zd = z.data();
    let mut out = vec![T::ZERO; d * h * w];
    for c in 0..d {
        let base = c * h * w;
        for t in 0..n {
            out[base + t] = zd[t * d + c];
        }
    }
    Tensor::from_vec(&[d, h, w], out)
}

/// Channel-major lattice `[d, h, w]` back to a token sequence `[h*w, d]`.
/// Exact inverse of [`seq2img`].
pub fn img2seq<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "img2seq",
            context: "input must be [d, h, w]",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = h * w;
    let xd = x.data();
    let mut out = vec![T::ZERO; n * d];
    for c in 0..d {
        let base = c * n;
        for t in 0..n {
            out[t * d + c] = xd[base + t];
        }
    }
    Tensor::from_vec(&[n, d], out)
}

/// Splits `[C, H, W]` into non-overlapping `p x p` patches, one flattened
/// patch per row: row `gi*(W/p) + gj` holds patch `(gi, gj)` laid out as
/// `(c, pi, pj)`.
pub fn patchify<T: Element>(img: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    if img.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "patchify",
            context: "input must be [C, H, W]",
            lhs: img.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if p == 0 || h % p != 0 {
        return Err(TensorError::NotDivisible {
            op: "patchify",
            dim: "height",
            size: h,
            divisor: p.max(1),
        });
    }
    if w % p != 0 {
        return Err(TensorError::NotDivisible {
            op: "patchify",
            dim: "width",
            size: w,
            divisor: p,
        });
    }
    let (gh, gw) = (h / p, w / p);
    let feat = c * p * p;
    let xd = img.data();
    let mut out = vec![T::ZERO; gh * gw * feat];
    for gi in 0..gh {
        for gj in 0..gw {
            let row = (gi * gw + gj) * feat;
            for ci in 0..c {
                for pi in 0..p {
                    for pj in 0..p {
                        out[row + ci * p * p + pi * p + pj] =
                            xd[ci * h * w + (gi * p + pi) * w + (gj * p + pj)];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[gh * gw, feat], out)
}

/// Inverse of [`patchify`]: reassembles patch rows into the `[C, H, W]` image.
pub fn unpatchify<T: Element>(
    patches: &Tensor<T>,
    channels: usize,
    h: usize,
    w: usize,
    p: usize,
) -> Result<Tensor<T>> {
    let (gh, gw) = (h / p, w / p);
    let feat = channels * p * p;
    if patches.shape() != [gh * gw, feat] {
        return Err(TensorError::ShapeMismatch {
            op: "unpatchify",
            context: "patch matrix does not match target image",
            lhs: patches.shape().to_vec(),
            rhs: vec![gh * gw, feat],
        });
    }
    let pd = patches.data();
    let mut out = vec![T::ZERO; channels * h * w];
    for gi in 0..gh {
        for gj in 0..gw {
            let row = (gi * gw + gj) * feat;
            for ci in 0..channels {
                for pi in 0..p {
                    for pj in 0..p {
                        out[ci * h * w + (gi * p + pi) * w + (gj * p + pj)] =
                            pd[row + ci * p * p + pi * p + pj];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[channels, h, w], out)
}
