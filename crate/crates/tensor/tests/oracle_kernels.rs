//! Independent naive-loop oracles for conv2d and matmul.
//!
//! The oracles below are deliberately dumb reference implementations kept
//! apart from the library kernels. Both sides accumulate over `(ci, kh, kw)`
//! (resp. `k`) in ascending order with the bias added last, so f64 results
//! must agree bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evit_tensor::kernels::{conv2d, matmul, Conv2dOpts};
use evit_tensor::Tensor;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Seven nested loops, nothing clever.
fn conv2d_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<f64> {
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, w_cin, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(w_cin, c_in / groups);
    let h_out = (h + 2 * padding - kh) / stride + 1;
    let w_out = (wd + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; n * c_out * h_out * w_out];
    for ni in 0..n {
        for co in 0..c_out {
            let group = co / (c_out / groups);
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for ci_off in 0..c_in / groups {
                        let ci = group * (c_in / groups) + ci_off;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oh * stride + ki) as isize - padding as isize;
                                let iw = (ow * stride + kj) as isize - padding as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                    continue;
                                }
                                let x_idx = ((ni * c_in + ci) * h + ih as usize) * wd
                                    + iw as usize;
                                let w_idx =
                                    ((co * w_cin + ci_off) * kh + ki) * kw + kj;
                                acc += x.data()[x_idx] * w.data()[w_idx];
                            }
                        }
                    }
                    let b = bias.map_or(0.0, |b| b.data()[co]);
                    out[((ni * c_out + co) * h_out + oh) * w_out + ow] = acc + b;
                }
            }
        }
    }
    Tensor::from_vec(&[n, c_out, h_out, w_out], out).unwrap()
}

fn matmul_naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a.data()[i * k + l] * b.data()[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(&[m, n], out).unwrap()
}

#[test]
fn conv2d_matches_naive_loop_exactly_on_seeded_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    for _ in 0..60 {
        let groups = [1usize, 2, 4][rng.gen_range(0..3)];
        let cin = groups * rng.gen_range(1..=3);
        let cout = groups * rng.gen_range(1..=3);
        let k = rng.gen_range(1..=3);
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=1);
        let h = rng.gen_range(k + stride..=k + stride + 4);
        let w = rng.gen_range(k + stride..=k + stride + 4);
        let n = rng.gen_range(1..=2);
        let x = random_tensor(&mut rng, &[n, cin, h, w]);
        let wt = random_tensor(&mut rng, &[cout, cin / groups, k, k]);
        let bias = if rng.gen_bool(0.5) {
            Some(random_tensor(&mut rng, &[cout]))
        } else {
            None
        };
        let opts = Conv2dOpts {
            stride,
            padding,
            groups,
        };
        let got = conv2d(&x, &wt, bias.as_ref(), opts).unwrap();
        let want = conv2d_naive(&x, &wt, bias.as_ref(), stride, padding, groups);
        assert_eq!(got.shape(), want.shape());
        assert_eq!(got.data(), want.data(), "exact f64 match required");
        cases += 1;
    }
    assert!(cases >= 50);
}

#[test]
fn matmul_matches_triple_loop_exactly_on_seeded_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let m = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=8);
        let a = random_tensor(&mut rng, &[m, k]);
        let b = random_tensor(&mut rng, &[k, n]);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_naive(&a, &b);
        assert_eq!(got.data(), want.data(), "exact f64 match required");
    }
}

#[test]
fn pointwise_conv_equals_matmul_over_positions() {
    // conv2d with g=1, k=1, stride=1, pad=0 is a linear map per position:
    // out[co, p] = sum_ci w[co, ci] * x[ci, p], i.e. W (Cout x Cin) . X (Cin x HW).
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let cin = rng.gen_range(1..=5);
        let cout = rng.gen_range(1..=5);
        let h = rng.gen_range(1..=4);
        let w = rng.gen_range(1..=4);
        let x = random_tensor(&mut rng, &[1, cin, h, w]);
        let wt = random_tensor(&mut rng, &[cout, cin, 1, 1]);

        let conv_out = conv2d(&x, &wt, None, Conv2dOpts::default()).unwrap();

        let w_mat = wt.reshaped(&[cout, cin]).unwrap();
        let x_mat = x.reshaped(&[cin, h * w]).unwrap();
        let mm = matmul(&w_mat, &x_mat).unwrap();

        assert_eq!(conv_out.data(), mm.data(), "pointwise conv must equal matmul exactly");
    }
}
