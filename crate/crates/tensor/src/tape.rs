//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward evaluation and the
//! op that produced it. The tape is append-only, so node order is already a
//! topological order and [`Tape::backward`] visits each node exactly once in
//! reverse. Tapes are rebuilt per forward pass; one tape is used by one
//! thread at a time, while distinct tapes may run in parallel.

use crate::error::{Result, TensorError};
use crate::kernels::{self, Activation, Conv2dOpts};
use crate::tensor::{Element, Tensor};

/// Handle to one value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddBias { x: Var, bias: Var },
    Matmul { a: Var, b: Var },
    Conv2d { x: Var, w: Var, bias: Option<Var>, opts: Conv2dOpts },
    AvgPool2d { x: Var, s: usize },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    ChannelAffine { x: Var, gamma: Var, beta: Var },
    Activation { x: Var, kind: Activation },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    Narrow { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Seq2Img { x: Var },
    Img2Seq { x: Var },
    Patchify { x: Var, p: usize },
    SumAll { x: Var },
    MeanSpatial { x: Var },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize> },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op,
}

/// One evaluation context: recorded forward values plus enough structure to
/// run the reverse sweep.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter value.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations executed by conv2d/matmul nodes so far,
    /// derived from the actual shapes of every recorded call.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = kernels::scale(self.value(x), c);
        self.push(v, Op::Scale { x, c })
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = kernels::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(v, Op::AddBias { x, bias }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ra = sa.len();
        let batch: usize = sa[..ra - 2].iter().product();
        self.macs += (batch * sa[ra - 2] * sa[ra - 1] * sb[sb.len() - 1]) as u64;
        Ok(self.push(v, Op::Matmul { a, b }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, opts: Conv2dOpts) -> Result<Var> {
        let v = kernels::conv2d(self.value(x), self.value(w), bias.map(|b| self.value(b)), opts)?;
        let (out, ws) = (v.shape(), self.shape(w));
        self.macs += (out.iter().product::<usize>() * ws[1] * ws[2] * ws[3]) as u64;
        Ok(self.push(v, Op::Conv2d { x, w, bias, opts }))
    }

    pub fn avgpool2d(&mut self, x: Var, s: usize) -> Result<Var> {
        let v = kernels::avgpool2d(self.value(x), s)?;
        Ok(self.push(v, Op::AvgPool2d { x, s }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = kernels::softmax(self.value(x), axis)?;
        Ok(self.push(v, Op::Softmax { x, axis }))
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = kernels::layernorm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let v = kernels::channel_affine(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(v, Op::ChannelAffine { x, gamma, beta }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = kernels::activation(self.value(x), kind);
        self.push(v, Op::Activation { x, kind })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape { x }))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = kernels::permute(self.value(x), axes)?;
        Ok(self.push(
            v,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
        ))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = kernels::narrow(self.value(x), axis, start, len)?;
        Ok(self.push(v, Op::Narrow { x, axis, start }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat(&tensors, axis)?;
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn seq2img(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let v = kernels::seq2img(self.value(x), h, w)?;
        Ok(self.push(v, Op::Seq2Img { x }))
    }

    pub fn img2seq(&mut self, x: Var) -> Result<Var> {
        let v = kernels::img2seq(self.value(x))?;
        Ok(self.push(v, Op::Img2Seq { x }))
    }

    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let v = kernels::patchify(self.value(x), p)?;
        Ok(self.push(v, Op::Patchify { x, p }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = kernels::sum_all(self.value(x));
        self.push(v, Op::SumAll { x })
    }

    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let v = kernels::mean_spatial(self.value(x))?;
        Ok(self.push(v, Op::MeanSpatial { x }))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = kernels::softmax_cross_entropy(self.value(logits), targets)?;
        Ok(self.push(
            v,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Returns one gradient slot per node;
    /// nodes the loss does not depend on keep `None`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::InvalidArgument {
                op: "backward",
                reason: format!(
                    "loss must be scalar, got shape {:?}",
                    self.shape(loss)
                ),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul { a, b } => {
                    let ga = kernels::mul(&g, self.value(*b)).expect("shapes recorded");
                    let gb = kernels::mul(&g, self.value(*a)).expect("shapes recorded");
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut grads, *x, kernels::scale(&g, *c));
                }
                Op::AddBias { x, bias } => {
                    let d = self.shape(*bias)[0];
                    let (gx, gb) = kernels::add_bias_backward(&g, d);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Matmul { a, b } => {
                    let (ga, gb) = kernels::matmul_backward(self.value(*a), self.value(*b), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Conv2d { x, w, bias, opts } => {
                    let (gx, gw, gb) = kernels::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        bias.is_some(),
                        *opts,
                        &g,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    if let (Some(b), Some(gb)) = (bias, gb) {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AvgPool2d { x, s } => {
                    let gx = kernels::avgpool2d_backward(self.shape(*x), *s, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax { x, axis } => {
                    let gx = kernels::softmax_backward(&self.nodes[i].value, &g, *axis);
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (gx, ggamma, gbeta) =
                        kernels::layernorm_backward(self.value(*x), self.value(*gamma), *eps, &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::ChannelAffine { x, gamma, beta } => {
                    let (gx, ggamma, gbeta) =
                        kernels::channel_affine_backward(self.value(*x), self.value(*gamma), &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::Activation { x, kind } => {
                    let gx = kernels::activation_backward(self.value(*x), &g, *kind);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape { x } => {
                    let gx = g.reshaped(self.shape(*x)).expect("recorded shape");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Permute { x, axes } => {
                    let gx =
                        kernels::permute(&g, &kernels::inverse_axes(axes)).expect("valid axes");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Narrow { x, axis, start } => {
                    let gx = kernels::narrow_backward(self.shape(*x), *axis, *start, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.shape(p)[*axis];
                        let gp = kernels::narrow(&g, *axis, offset, len).expect("within bounds");
                        accumulate(&mut grads, p, gp);
                        offset += len;
                    }
                }
                Op::Seq2Img { x } => {
                    let gx = kernels::img2seq(&g).expect("rank 3 grad");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Img2Seq { x } => {
                    let s = self.shape(*x);
                    let gx = kernels::seq2img(&g, s[1], s[2]).expect("recorded lattice");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Patchify { x, p } => {
                    let s = self.shape(*x);
                    let gx =
                        kernels::unpatchify(&g, s[0], s[1], s[2], *p).expect("recorded shape");
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll { x } => {
                    accumulate(&mut grads, *x, kernels::sum_all_backward(self.shape(*x), &g));
                }
                Op::MeanSpatial { x } => {
                    let gx = kernels::mean_spatial_backward(self.shape(*x), &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxCrossEntropy { logits, targets } => {
                    let gx =
                        kernels::softmax_cross_entropy_backward(self.value(*logits), targets, &g);
                    accumulate(&mut grads, *logits, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            *existing = kernels::add(existing, &delta).expect("gradient shapes agree")
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Result of a reverse sweep: gradient per tape node.
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to `v`, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}
