//! 2D convolution (cross-correlation) and average pooling.
//!
//! One kernel covers pointwise (`groups=1, k=1`), grouped, and depthwise
//! (`groups == channels`) convolution. Accumulation for each output element
//! runs over `(ci, kh, kw)` in ascending order with the bias added last, so
//! f64 results match a naive seven-loop reference bit-for-bit and pointwise
//! convolution matches `matmul` over flattened positions exactly.

use crate::error::{Result, TensorError};
use crate::parallel::for_each_chunk;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub cin_per_group: usize,
    pub cout_per_group: usize,
}

pub(crate) fn conv_dims<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOpts,
) -> Result<ConvDims> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            context: "input must be [N,Cin,H,W] and weight [Cout,Cin/g,kh,kw]",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, w_cin, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let g = opts.groups;
    if g == 0 || opts.stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            reason: "stride and groups must be >= 1".into(),
        });
    }
    if c_in % g != 0 {
        return Err(TensorError::NotDivisible {
            op: "conv2d",
            dim: "input channels",
            size: c_in,
            divisor: g,
        });
    }
    if c_out % g != 0 {
        return Err(TensorError::NotDivisible {
            op: "conv2d",
            dim: "output channels",
            size: c_out,
            divisor: g,
        });
    }
    if w_cin != c_in / g {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            context: "weight channel dim must equal Cin/groups",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                context: "bias must be [Cout]",
                lhs: vec![c_out],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let h_pad = h + 2 * opts.padding;
    let w_pad = wd + 2 * opts.padding;
    if kh > h_pad || kw > w_pad {
        return Err(TensorError::InvalidArgument {
            op: "conv2d",
            reason: format!("kernel {kh}x{kw} exceeds padded input {h_pad}x{w_pad}"),
        });
    }
    Ok(ConvDims {
        n,
        c_in,
        h,
        w: wd,
        c_out,
        kh,
        kw,
        h_out: (h_pad - kh) / opts.stride + 1,
        w_out: (w_pad - kw) / opts.stride + 1,
        cin_per_group: c_in / g,
        cout_per_group: c_out / g,
    })
}

pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOpts,
) -> Result<Tensor<T>> {
    let d = conv_dims(x, w, bias, opts)?;
    let (stride, pad) = (opts.stride, opts.padding);
    let xd = x.data();
    let wd = w.data();
    let bd = bias.map(|b| b.data());

    let plane = d.h_out * d.w_out;
    let mut out = vec![T::ZERO; d.n * d.c_out * plane];
    // One task per (n, co) output plane.
    for_each_chunk(&mut out, plane, |idx, out_plane| {
        let n_i = idx / d.c_out;
        let co = idx % d.c_out;
        let group = co / d.cout_per_group;
        let ci_base = group * d.cin_per_group;
        let w_base = co * d.cin_per_group * d.kh * d.kw;
        let b_v = bd.map_or(T::ZERO, |b| b[co]);
        for oh in 0..d.h_out {
            for ow in 0..d.w_out {
                let mut acc = T::ZERO;
                for ci_off in 0..d.cin_per_group {
                    let x_base = ((n_i * d.c_in + ci_base + ci_off) * d.h) * d.w;
                    let wk_base = w_base + ci_off * d.kh * d.kw;
                    for ki in 0..d.kh {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        for kj in 0..d.kw {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= d.w as isize {
                                continue;
                            }
                            acc += xd[x_base + ih as usize * d.w + iw as usize]
                                * wd[wk_base + ki * d.kw + kj];
                        }
                    }
                }
                out_plane[oh * d.w_out + ow] = acc + b_v;
            }
        }
    });
    Tensor::from_vec(&[d.n, d.c_out, d.h_out, d.w_out], out)
}

/// Gradients of `conv2d` with respect to input, weight, and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    opts: Conv2dOpts,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Option<Tensor<T>>) {
    let d = conv_dims(x, w, None, opts).expect("forward already validated");
    let (stride, pad) = (opts.stride, opts.padding);
    let xd = x.data();
    let wd = w.data();
    let gd = grad.data();
    let o_plane = d.h_out * d.w_out;
    let i_plane = d.h * d.w;

    // gx: one task per (n, ci) input plane.
    let mut gx = vec![T::ZERO; xd.len()];
    for_each_chunk(&mut gx, i_plane, |idx, gx_plane| {
        let n_i = idx / d.c_in;
        let ci = idx % d.c_in;
        let group = ci / d.cin_per_group;
        let ci_off = ci % d.cin_per_group;
        for co_off in 0..d.cout_per_group {
            let co = group * d.cout_per_group + co_off;
            let g_base = (n_i * d.c_out + co) * o_plane;
            let wk_base = (co * d.cin_per_group + ci_off) * d.kh * d.kw;
            for oh in 0..d.h_out {
                for ow in 0..d.w_out {
                    let g_v = gd[g_base + oh * d.w_out + ow];
                    for ki in 0..d.kh {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        for kj in 0..d.kw {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= d.w as isize {
                                continue;
                            }
                            gx_plane[ih as usize * d.w + iw as usize] +=
                                g_v * wd[wk_base + ki * d.kw + kj];
                        }
                    }
                }
            }
        }
    });

    // gw: one task per output channel.
    let w_slice = d.cin_per_group * d.kh * d.kw;
    let mut gw = vec![T::ZERO; wd.len()];
    for_each_chunk(&mut gw, w_slice, |co, gw_slice| {
        let group = co / d.cout_per_group;
        let ci_base = group * d.cin_per_group;
        for n_i in 0..d.n {
            let g_base = (n_i * d.c_out + co) * o_plane;
            for oh in 0..d.h_out {
                for ow in 0..d.w_out {
                    let g_v = gd[g_base + oh * d.w_out + ow];
                    for ci_off in 0..d.cin_per_group {
                        let x_base = (n_i * d.c_in + ci_base + ci_off) * i_plane;
                        for ki in 0..d.kh {
                            let ih = (oh * stride + ki) as isize - pad as isize;
                            if ih < 0 || ih >= d.h as isize {
                                continue;
                            }
                            for kj in 0..d.kw {
                                let iw = (ow * stride + kj) as isize - pad as isize;
                                if iw < 0 || iw >= d.w as isize {
                                    continue;
                                }
                                gw_slice[ci_off * d.kh * d.kw + ki * d.kw + kj] +=
                                    g_v * xd[x_base + ih as usize * d.w + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    });

    let gb = has_bias.then(|| {
        let mut gb = vec![T::ZERO; d.c_out];
        for n_i in 0..d.n {
            for (co, gb_v) in gb.iter_mut().enumerate() {
                let g_base = (n_i * d.c_out + co) * o_plane;
                for v in &gd[g_base..g_base + o_plane] {
                    *gb_v += *v;
                }
            }
        }
        Tensor::from_vec(&[d.c_out], gb).expect("gb shape")
    });

    (
        Tensor::from_vec(x.shape(), gx).expect("gx shape"),
        Tensor::from_vec(w.shape(), gw).expect("gw shape"),
        gb,
    )
}

/// Average pooling with square windows of stride `s`; `s = 1` is the identity.
pub fn avgpool2d<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "avgpool2d",
            context: "input must be [N,C,H,W]",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    }
    if s == 0 {
        return Err(TensorError::InvalidArgument {
            op: "avgpool2d",
            reason: "stride must be >= 1".into(),
        });
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h % s != 0 {
        return Err(TensorError::NotDivisible {
            op: "avgpool2d",
            dim: "height",
            size: h,
            divisor: s,
        });
    }
    if w % s != 0 {
        return Err(TensorError::NotDivisible {
            op: "avgpool2d",
            dim: "width",
            size: w,
            divisor: s,
        });
    }
    let (ho, wo) = (h / s, w / s);
    // Divide by the window count: correctly rounded, so the mean is exact
    // whenever the window sum and the true mean are representable.
    let count = T::from_f64((s * s) as f64);
    let xd = x.data();
    let mut out = vec![T::ZERO; n * c * ho * wo];
    for_each_chunk(&mut out, ho * wo, |plane_idx, out_plane| {
        let base = plane_idx * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = T::ZERO;
                for di in 0..s {
                    for dj in 0..s {
                        acc += xd[base + (oh * s + di) * w + (ow * s + dj)];
                    }
                }
                out_plane[oh * wo + ow] = acc / count;
            }
        }
    });
    Tensor::from_vec(&[n, c, ho, wo], out)
}

/// Gradient of `avgpool2d`: each input cell receives `g / s^2`.
pub fn avgpool2d_backward<T: Element>(
    in_shape: &[usize],
    s: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = (h / s, w / s);
    let count = T::from_f64((s * s) as f64);
    let gd = grad.data();
    let mut gx = vec![T::ZERO; in_shape.iter().product()];
    for_each_chunk(&mut gx, h * w, |plane_idx, gx_plane| {
        let g_base = plane_idx * ho * wo;
        for ih in 0..h {
            for iw in 0..w {
                gx_plane[ih * w + iw] = gd[g_base + (ih / s) * wo + (iw / s)] / count;
            }
        }
    });
    Tensor::from_vec(in_shape, gx).expect("gx shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity_kernel_preserves_input() {
        // Depthwise 1x1 kernel with weight 1.0 per channel.
        let x = Tensor::<f64>::from_fn(&[1, 3, 5, 5], |i| (i as f64).sin());
        let w = Tensor::<f64>::filled(&[3, 1, 1, 1], 1.0);
        let opts = Conv2dOpts {
            stride: 1,
            padding: 0,
            groups: 3,
        };
        let out = conv2d(&x, &w, None, opts).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f64>::filled(&[1, 1, 4, 4], 1.0);
        let w = Tensor::<f64>::filled(&[1, 1, 2, 2], 1.0);
        let out = conv2d(
            &x,
            &w,
            None,
            Conv2dOpts {
                stride: 2,
                padding: 0,
                groups: 1,
            },
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn group_divisibility_enforced() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 1, 1, 1]);
        let err = conv2d(
            &x,
            &w,
            None,
            Conv2dOpts {
                stride: 1,
                padding: 0,
                groups: 2,
            },
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NotDivisible { .. }));
    }

    #[test]
    fn avgpool_of_constant_is_constant() {
        let x = Tensor::<f64>::filled(&[1, 2, 6, 6], 3.25);
        for s in [1, 2, 3, 6] {
            let out = avgpool2d(&x, s).unwrap();
            assert!(out.data().iter().all(|&v| v == 3.25), "s={s}");
        }
    }

    #[test]
    fn avgpool_stride_one_is_identity() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let out = avgpool2d(&x, 1).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn avgpool_two_by_two_mean() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = avgpool2d(&x, 2).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn avgpool_rejects_non_divisible() {
        let x = Tensor::<f64>::zeros(&[1, 1, 5, 4]);
        assert!(matches!(
            avgpool2d(&x, 2),
            Err(TensorError::NotDivisible { dim: "height", .. })
        ));
    }
}
