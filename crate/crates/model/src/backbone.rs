//! The efficient hybrid backbone: convolutional attention (MHCA), pooled
//! self-attention (ESA), the lattice feed-forward block (LFFN), and the two
//! residual blocks (ECB, LTB) assembled into a four-stage pyramid.
//!
//! Block sublayers live on `[d, h, w]` feature maps; attention runs on the
//! equivalent `[h*w, d]` token view via the lossless seq2img/img2seq pair.
//! Every block is a residual composition, so zeroed sublayer weights give the
//! exact identity map.

use evit_tensor::kernels::Conv2dOpts;
use evit_tensor::{Activation, Element, Tape, Tensor, Var};

use crate::config::{BackboneConfig, NUM_STAGES, STAGE_REDUCTIONS};
use crate::error::{ModelError, Result};
use crate::params::{Binding, Init, Initializer, ParamStore};

pub use evit_tensor::kernels::{img2seq, seq2img};

const LN_EPS: f64 = 1e-5;

/// The four multi-scale feature maps a detection head would consume, at
/// strides 4, 8, 16, 32 of the input.
pub struct FeaturePyramid<T: Element> {
    pub maps: [Tensor<T>; NUM_STAGES],
}

impl<T: Element> FeaturePyramid<T> {
    pub fn shapes(&self) -> [Vec<usize>; NUM_STAGES] {
        [
            self.maps[0].shape().to_vec(),
            self.maps[1].shape().to_vec(),
            self.maps[2].shape().to_vec(),
            self.maps[3].shape().to_vec(),
        ]
    }
}

// --- parameter construction ---------------------------------------------

fn add_conv<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    c_out: usize,
    c_in_per_group: usize,
    k: usize,
) -> Result<()> {
    let fan_in = c_in_per_group * k * k;
    store.insert(
        format!("{prefix}.weight"),
        ini.weight(&[c_out, c_in_per_group, k, k], fan_in),
    )?;
    store.insert(format!("{prefix}.bias"), ini.bias(c_out))?;
    Ok(())
}

fn add_norm<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    c: usize,
) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), ini.gain(c))?;
    store.insert(format!("{prefix}.beta"), ini.bias(c))?;
    Ok(())
}

fn add_mhca<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    d: usize,
    heads: usize,
    k: usize,
) -> Result<()> {
    add_conv(store, ini, &format!("{prefix}.gconv"), d, d / heads, k)?;
    add_norm(store, ini, &format!("{prefix}.norm"), d)?;
    add_conv(store, ini, &format!("{prefix}.proj"), d, d, 1)?;
    Ok(())
}

fn add_lffn<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    d: usize,
    hidden: usize,
    depthwise: bool,
) -> Result<()> {
    add_conv(store, ini, &format!("{prefix}.expand"), hidden, d, 1)?;
    if depthwise {
        add_conv(store, ini, &format!("{prefix}.dw"), hidden, 1, 3)?;
    }
    add_conv(store, ini, &format!("{prefix}.project"), d, hidden, 1)?;
    Ok(())
}

fn add_esa<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    d: usize,
    heads: usize,
) -> Result<()> {
    let dh = d / heads;
    for w in ["wq", "wk", "wv"] {
        store.insert(format!("{prefix}.{w}"), ini.weight(&[heads, dh, dh], dh))?;
    }
    store.insert(format!("{prefix}.wo"), ini.weight(&[d, d], d))?;
    Ok(())
}

fn add_ecb<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    cfg: &BackboneConfig,
    d: usize,
    heads: usize,
) -> Result<()> {
    add_mhca(store, ini, &format!("{prefix}.mhca"), d, heads, cfg.mhca_kernel)?;
    add_lffn(
        store,
        ini,
        &format!("{prefix}.lffn"),
        d,
        cfg.lffn_hidden(d)?,
        cfg.lffn_depthwise,
    )
}

fn add_ltb<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    cfg: &BackboneConfig,
    d: usize,
    heads: usize,
) -> Result<()> {
    let half = d / 2;
    add_norm(store, ini, &format!("{prefix}.ln"), half)?;
    add_esa(store, ini, &format!("{prefix}.esa"), half, heads)?;
    add_mhca(store, ini, &format!("{prefix}.mhca"), half, heads, cfg.mhca_kernel)?;
    add_conv(store, ini, &format!("{prefix}.fuse"), d, d, 1)?;
    add_lffn(
        store,
        ini,
        &format!("{prefix}.lffn"),
        d,
        cfg.lffn_hidden(d)?,
        cfg.lffn_depthwise,
    )
}

fn add_patch_embed<T: Element>(
    store: &mut ParamStore<T>,
    ini: &mut Initializer,
    prefix: &str,
    c_in: usize,
    width: usize,
    reduction: usize,
) -> Result<()> {
    add_conv(store, ini, &format!("{prefix}.conv0"), width, c_in, 3)?;
    if reduction == 4 {
        add_norm(store, ini, &format!("{prefix}.norm"), width)?;
        add_conv(store, ini, &format!("{prefix}.conv1"), width, width, 3)?;
    }
    Ok(())
}

/// Builds the backbone's full parameter set in canonical order.
pub fn build_params<T: Element>(cfg: &BackboneConfig, init: Init) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut ini = Initializer::new(init);
    let mut store = ParamStore::new();
    let mut c_in = cfg.image_channels;
    for stage in 0..NUM_STAGES {
        let width = cfg.stage_widths[stage];
        let heads = cfg.stage_heads[stage];
        add_patch_embed(
            &mut store,
            &mut ini,
            &format!("stage{stage}.embed"),
            c_in,
            width,
            STAGE_REDUCTIONS[stage],
        )?;
        for block in 0..cfg.stage_depths[stage] {
            let prefix = format!("stage{stage}.block{block}");
            if cfg.is_ltb(stage, block) {
                add_ltb(&mut store, &mut ini, &prefix, cfg, width, heads)?;
            } else {
                add_ecb(&mut store, &mut ini, &prefix, cfg, width, heads)?;
            }
        }
        c_in = width;
    }
    Ok(store)
}

// --- forward --------------------------------------------------------------

/// Convolution on a `[C, H, W]` map (wraps the `[N,...]` kernel).
fn conv_chw<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    opts: Conv2dOpts,
) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x4 = tape.reshape(x, &[1, s[0], s[1], s[2]])?;
    let y = tape.conv2d(x4, w, b, opts)?;
    let ys = tape.shape(y).to_vec();
    Ok(tape.reshape(y, &[ys[1], ys[2], ys[3]])?)
}

fn conv_from_params<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    bound: &Binding<'_, T>,
    prefix: &str,
    opts: Conv2dOpts,
) -> Result<Var> {
    let w = bound.var(&format!("{prefix}.weight"))?;
    let b = bound.var(&format!("{prefix}.bias"))?;
    conv_chw(tape, x, w, Some(b), opts)
}

fn norm_act<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    bound: &Binding<'_, T>,
    prefix: &str,
    act: Activation,
) -> Result<Var> {
    let gamma = bound.var(&format!("{prefix}.gamma"))?;
    let beta = bound.var(&format!("{prefix}.beta"))?;
    let normed = tape.channel_affine(x, gamma, beta)?;
    Ok(tape.activation(normed, act))
}

/// Multi-head convolutional attention on a `[d, h, w]` map: grouped k x k
/// neighborhood mixing per head, folded per-channel normalization and
/// activation, then the pointwise output projection. Spatial shape is
/// preserved by same-padding; the receptive field is exactly k x k.
pub fn mhca<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    bound: &Binding<'_, T>,
    prefix: &str,
    heads: usize,
    k: usize,
    act: Activation,
) -> Result<Var> {
    let d = tape.shape(x)[0];
    if heads == 0 || d % heads != 0 {
        return Err(ModelError::config(format!(
            "mhca: width {d} not divisible by heads {heads}"
        )));
    }
    if k % 2 == 0 {
        return Err(ModelError::config(format!(
            "mhca: kernel {k} must be odd for same-padding"
        )));
    }
    let grouped = conv_from_params(
        tape,
        x,
        bound,
        &format!("{prefix}.gconv"),
        Conv2dOpts {
            stride: 1,
            padding: (k - 1) / 2,
            groups: heads,
        },
    )?;
    let mixed = norm_act(tape, grouped, bound, &format!("{prefix}.norm"), act)?;
    conv_from_params(
        tape,
        mixed,
        bound,
        &format!("{prefix}.proj"),
        Conv2dOpts::default(),
    )
}

/// Local feed-forward on a token sequence `[N, d]` with lattice `(h, w)`:
/// expand by 1x1 convolution, optional depthwise 3x3 locality convolution,
/// activation, project back by 1x1 convolution.
pub fn lffn<T: Element>(
    tape: &mut Tape<T>,
    z: Var,
    h: usize,
    w: usize,
    bound: &Binding<'_, T>,
    prefix: &str,
    act: Activation,
    depthwise: bool,
) -> Result<Var> {
    let img = tape.seq2img(z, h, w)?;
    let expanded = conv_from_params(
        tape,
        img,
        bound,
        &format!("{prefix}.expand"),
        Conv2dOpts::default(),
    )?;
    let local = if depthwise {
        let hidden = tape.shape(expanded)[0];
        conv_from_params(
            tape,
            expanded,
            bound,
            &format!("{prefix}.dw"),
            Conv2dOpts {
                stride: 1,
                padding: 1,
                groups: hidden,
            },
        )?
    } else {
        expanded
    };
    let activated = tape.activation(local, act);
    let projected = conv_from_params(
        tape,
        activated,
        bound,
        &format!("{prefix}.project"),
        Conv2dOpts::default(),
    )?;
    Ok(tape.img2seq(projected)?)
}

/// Pools a `[N, c]` token sequence on its `(h, w)` lattice by stride `s`.
fn pool_tokens<T: Element>(
    tape: &mut Tape<T>,
    tokens: Var,
    h: usize,
    w: usize,
    s: usize,
) -> Result<Var> {
    if s == 1 {
        return Ok(tokens);
    }
    let img = tape.seq2img(tokens, h, w)?;
    let c = tape.shape(img)[0];
    let img4 = tape.reshape(img, &[1, c, h, w])?;
    let pooled = tape.avgpool2d(img4, s)?;
    let img3 = tape.reshape(pooled, &[c, h / s, w / s])?;
    Ok(tape.img2seq(img3)?)
}

/// Efficient self-attention on tokens `[N, d]` over an `(h, w)` lattice:
/// channels split into heads, keys and values average-pooled by stride `s`
/// on the lattice before the scaled dot-product, heads concatenated and
/// projected. With `s = 1` this reduces to plain multi-head self-attention.
pub fn esa<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    h_lattice: usize,
    w_lattice: usize,
    bound: &Binding<'_, T>,
    prefix: &str,
    heads: usize,
    s: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (n, d) = (shape[0], shape[1]);
    if n != h_lattice * w_lattice {
        return Err(ModelError::config(format!(
            "esa: {n} tokens do not fill a {h_lattice}x{w_lattice} lattice"
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(ModelError::config(format!(
            "esa: width {d} not divisible by heads {heads}"
        )));
    }
    if h_lattice % s != 0 || w_lattice % s != 0 {
        return Err(ModelError::config(format!(
            "esa: lattice {h_lattice}x{w_lattice} not divisible by stride {s}"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let wq = bound.var(&format!("{prefix}.wq"))?;
    let wk = bound.var(&format!("{prefix}.wk"))?;
    let wv = bound.var(&format!("{prefix}.wv"))?;

    let mut head_outputs = Vec::with_capacity(heads);
    for head in 0..heads {
        let x_i = tape.narrow(x, 1, head * dh, dh)?;
        let take = |tape: &mut Tape<T>, w: Var| -> Result<Var> {
            let slice = tape.narrow(w, 0, head, 1)?;
            Ok(tape.reshape(slice, &[dh, dh])?)
        };
        let wq_i = take(tape, wq)?;
        let wk_i = take(tape, wk)?;
        let wv_i = take(tape, wv)?;

        let q = tape.matmul(x_i, wq_i)?;
        let k = tape.matmul(x_i, wk_i)?;
        let v = tape.matmul(x_i, wv_i)?;
        let k = pool_tokens(tape, k, h_lattice, w_lattice, s)?;
        let v = pool_tokens(tape, v, h_lattice, w_lattice, s)?;

        let k_t = tape.permute(k, &[1, 0])?;
        let scores = tape.matmul(q, k_t)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax(scaled, 1)?;
        head_outputs.push(tape.matmul(attn, v)?);
    }
    let merged = tape.concat(&head_outputs, 1)?;
    Ok(tape.matmul(merged, bound.var(&format!("{prefix}.wo"))?)?)
}

/// Convolution block: `z~ = MHCA(z) + z; out = LFFN(z~) + z~`.
pub fn ecb<T: Element>(
    tape: &mut Tape<T>,
    z: Var,
    bound: &Binding<'_, T>,
    prefix: &str,
    cfg: &BackboneConfig,
    heads: usize,
) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    let (h, w) = (shape[1], shape[2]);
    let attn = mhca(
        tape,
        z,
        bound,
        &format!("{prefix}.mhca"),
        heads,
        cfg.mhca_kernel,
        cfg.activation,
    )?;
    let z_tilde = tape.add(attn, z)?;

    let seq = tape.img2seq(z_tilde)?;
    let y = lffn(
        tape,
        seq,
        h,
        w,
        bound,
        &format!("{prefix}.lffn"),
        cfg.activation,
        cfg.lffn_depthwise,
    )?;
    let y_img = tape.seq2img(y, h, w)?;
    Ok(tape.add(y_img, z_tilde)?)
}

/// Transformer block: channels split into two parallel forks (pooled
/// self-attention for low frequencies, convolutional attention for high
/// frequencies), concatenated, fused pointwise, then the residual
/// feed-forward as in [`ecb`].
pub fn ltb<T: Element>(
    tape: &mut Tape<T>,
    z: Var,
    bound: &Binding<'_, T>,
    prefix: &str,
    cfg: &BackboneConfig,
    heads: usize,
    esa_stride: usize,
) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    if d % 2 != 0 {
        return Err(ModelError::config(format!(
            "ltb: width {d} must be even for the channel split"
        )));
    }
    let half = d / 2;

    let fork_a = tape.narrow(z, 0, 0, half)?;
    let tokens = tape.img2seq(fork_a)?;
    let gamma = bound.var(&format!("{prefix}.ln.gamma"))?;
    let beta = bound.var(&format!("{prefix}.ln.beta"))?;
    let normed = tape.layernorm(tokens, gamma, beta, LN_EPS)?;
    let attended = esa(
        tape,
        normed,
        h,
        w,
        bound,
        &format!("{prefix}.esa"),
        heads,
        esa_stride,
    )?;
    let attn_map = tape.seq2img(attended, h, w)?;

    let fork_b = tape.narrow(z, 0, half, half)?;
    let conv_map = mhca(
        tape,
        fork_b,
        bound,
        &format!("{prefix}.mhca"),
        heads,
        cfg.mhca_kernel,
        cfg.activation,
    )?;

    let mixed = tape.concat(&[attn_map, conv_map], 0)?;
    let fused = conv_from_params(
        tape,
        mixed,
        bound,
        &format!("{prefix}.fuse"),
        Conv2dOpts::default(),
    )?;
    let z_tilde = tape.add(fused, z)?;

    let seq = tape.img2seq(z_tilde)?;
    let y = lffn(
        tape,
        seq,
        h,
        w,
        bound,
        &format!("{prefix}.lffn"),
        cfg.activation,
        cfg.lffn_depthwise,
    )?;
    let y_img = tape.seq2img(y, h, w)?;
    Ok(tape.add(y_img, z_tilde)?)
}

/// Stage entry: downsample 4x (two strided convolutions with normalization
/// and activation between) or 2x (one strided convolution), changing the
/// channel count to the stage width.
pub fn patch_embed<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    bound: &Binding<'_, T>,
    prefix: &str,
    reduction: usize,
    act: Activation,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (h, w) = (shape[1], shape[2]);
    if !matches!(reduction, 2 | 4) {
        return Err(ModelError::config(format!(
            "patch_embed: reduction {reduction} not in {{2, 4}}"
        )));
    }
    if h % reduction != 0 || w % reduction != 0 {
        return Err(ModelError::config(format!(
            "patch_embed: input {h}x{w} not divisible by reduction {reduction}"
        )));
    }
    let stride2 = Conv2dOpts {
        stride: 2,
        padding: 1,
        groups: 1,
    };
    let first = conv_from_params(tape, x, bound, &format!("{prefix}.conv0"), stride2)?;
    if reduction == 2 {
        return Ok(first);
    }
    let normed = norm_act(tape, first, bound, &format!("{prefix}.norm"), act)?;
    conv_from_params(tape, normed, bound, &format!("{prefix}.conv1"), stride2)
}

/// Full pyramid forward on the tape; returns the four stage outputs.
pub fn backbone_forward<T: Element>(
    tape: &mut Tape<T>,
    image: Var,
    cfg: &BackboneConfig,
    bound: &Binding<'_, T>,
) -> Result<[Var; NUM_STAGES]> {
    cfg.validate()?;
    let shape = tape.shape(image).to_vec();
    if shape.len() != 3 || shape[0] != cfg.image_channels {
        return Err(ModelError::config(format!(
            "backbone: image shape {shape:?} does not match {} channels",
            cfg.image_channels
        )));
    }
    // Lattice divisibility (including each stage's pooling stride where a
    // transformer block actually runs) is validated here and inside esa.
    cfg.stage_lattices(shape[1], shape[2])?;

    let mut x = image;
    let mut outputs = Vec::with_capacity(NUM_STAGES);
    for stage in 0..NUM_STAGES {
        x = patch_embed(
            tape,
            x,
            bound,
            &format!("stage{stage}.embed"),
            STAGE_REDUCTIONS[stage],
            cfg.activation,
        )?;
        for block in 0..cfg.stage_depths[stage] {
            let prefix = format!("stage{stage}.block{block}");
            x = if cfg.is_ltb(stage, block) {
                ltb(
                    tape,
                    x,
                    bound,
                    &prefix,
                    cfg,
                    cfg.stage_heads[stage],
                    cfg.esa_strides[stage],
                )?
            } else {
                ecb(tape, x, bound, &prefix, cfg, cfg.stage_heads[stage])?
            };
        }
        outputs.push(x);
    }
    Ok([outputs[0], outputs[1], outputs[2], outputs[3]])
}

/// Runs the backbone on a fresh tape and extracts the pyramid values.
pub fn forward_image<T: Element>(
    image: &Tensor<T>,
    cfg: &BackboneConfig,
    params: &ParamStore<T>,
) -> Result<FeaturePyramid<T>> {
    let mut tape = Tape::new();
    let img = tape.leaf(image.clone());
    let bound = params.bind(&mut tape);
    let vars = backbone_forward(&mut tape, img, cfg, &bound)?;
    Ok(FeaturePyramid {
        maps: [
            tape.value(vars[0]).clone(),
            tape.value(vars[1]).clone(),
            tape.value(vars[2]).clone(),
            tape.value(vars[3]).clone(),
        ],
    })
}
