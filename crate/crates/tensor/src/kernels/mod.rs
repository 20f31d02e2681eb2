//! Forward kernels and their reverse-mode gradient rules.
//!
//! Every kernel is a pure function of its inputs; the [`crate::tape`] module
//! wires them into recorded computations.

pub mod conv;
pub mod elementwise;
pub mod matmul;
pub mod movement;
pub mod norm;
pub mod reduce;

pub use conv::{avgpool2d, avgpool2d_backward, conv2d, conv2d_backward, Conv2dOpts};
pub use elementwise::{
    activation, activation_backward, add, add_bias, add_bias_backward, mul, scale, Activation,
};
pub use matmul::{matmul, matmul_backward};
pub use movement::{
    concat, img2seq, inverse_axes, narrow, narrow_backward, patchify, permute, seq2img,
    unpatchify,
};
pub use norm::{
    channel_affine, channel_affine_backward, layernorm, layernorm_backward, softmax,
    softmax_backward,
};
pub use reduce::{
    mean_spatial, mean_spatial_backward, softmax_cross_entropy, softmax_cross_entropy_backward,
    sum_all, sum_all_backward,
};
