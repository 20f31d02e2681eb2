//! Vanilla ViT encoder: the documented baseline and the oracle that the
//! backbone's pooled attention must reproduce in the degenerate setting.
//!
//! The encoder is the standard pre-norm composition: patch embedding plus a
//! class token and learned absolute positional embeddings, then `depth`
//! layers of residual attention and feed-forward, with normalization inside
//! each residual branch. The final class-token row is the feature output.

use evit_tensor::{Tape, Tensor, Var};

pub use evit_tensor::kernels::{patchify, unpatchify};

use crate::config::ViTConfig;
use crate::error::{ModelError, Result};
use crate::params::{Binding, Init, Initializer, ParamStore};

pub const IMAGE_CHANNELS: usize = 3;

/// Builds the full parameter set for a ViT encoder.
pub fn build_params<T: evit_tensor::Element>(cfg: &ViTConfig, init: Init) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut ini = Initializer::new(init);
    let mut store = ParamStore::new();
    let c = cfg.embed_dim;
    let patch_dim = IMAGE_CHANNELS * cfg.patch_size * cfg.patch_size;
    let tokens = cfg.num_patches() + 1;

    store.insert("embed.weight", ini.weight(&[patch_dim, c], patch_dim))?;
    store.insert("embed.bias", ini.bias(c))?;
    store.insert("cls_token", ini.token(&[1, c]))?;
    store.insert("pos_embed", ini.token(&[tokens, c]))?;

    for layer in 0..cfg.depth {
        let p = format!("layer{layer}");
        store.insert(format!("{p}.ln1.gamma"), ini.gain(c))?;
        store.insert(format!("{p}.ln1.beta"), ini.bias(c))?;
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(format!("{p}.attn.{w}"), ini.weight(&[c, c], c))?;
        }
        store.insert(format!("{p}.ln2.gamma"), ini.gain(c))?;
        store.insert(format!("{p}.ln2.beta"), ini.bias(c))?;
        let hidden = cfg.ffn_hidden();
        store.insert(format!("{p}.ffn.w1"), ini.weight(&[c, hidden], c))?;
        store.insert(format!("{p}.ffn.b1"), ini.bias(hidden))?;
        store.insert(format!("{p}.ffn.w2"), ini.weight(&[hidden, c], hidden))?;
        store.insert(format!("{p}.ffn.b2"), ini.bias(c))?;
    }
    Ok(store)
}

/// Multi-head self-attention interior (no normalization, no residual; the
/// caller owns both). Heads are slices of the projected `[N, C]` sequence,
/// scaled by `1/sqrt(C/heads)`.
pub fn msa<T: evit_tensor::Element>(
    tape: &mut Tape<T>,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(ModelError::config(format!(
            "msa expects [N, C] tokens, got {shape:?}"
        )));
    }
    let c = shape[1];
    if heads == 0 || c % heads != 0 {
        return Err(ModelError::config(format!(
            "embed dim {c} not divisible by heads {heads}"
        )));
    }
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;

    let mut head_outputs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qi = tape.narrow(q, 1, head * dh, dh)?;
        let ki = tape.narrow(k, 1, head * dh, dh)?;
        let vi = tape.narrow(v, 1, head * dh, dh)?;
        let ki_t = tape.permute(ki, &[1, 0])?;
        let scores = tape.matmul(qi, ki_t)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax(scaled, 1)?;
        head_outputs.push(tape.matmul(attn, vi)?);
    }
    let merged = tape.concat(&head_outputs, 1)?;
    Ok(tape.matmul(merged, wo)?)
}

fn msa_from_params<T: evit_tensor::Element>(
    tape: &mut Tape<T>,
    x: Var,
    bound: &Binding<'_, T>,
    prefix: &str,
    heads: usize,
) -> Result<Var> {
    let wq = bound.var(&format!("{prefix}.wq"))?;
    let wk = bound.var(&format!("{prefix}.wk"))?;
    let wv = bound.var(&format!("{prefix}.wv"))?;
    let wo = bound.var(&format!("{prefix}.wo"))?;
    msa(tape, x, wq, wk, wv, wo, heads)
}

const LN_EPS: f64 = 1e-5;

/// Full encoder forward; returns the final class-token feature vector `[C]`.
pub fn vit_forward<T: evit_tensor::Element>(
    tape: &mut Tape<T>,
    image: Var,
    cfg: &ViTConfig,
    bound: &Binding<'_, T>,
) -> Result<Var> {
    cfg.validate()?;
    let shape = tape.shape(image).to_vec();
    let (h, w) = cfg.image_size;
    if shape != [IMAGE_CHANNELS, h, w] {
        return Err(ModelError::config(format!(
            "image shape {shape:?} does not match config {:?}",
            [IMAGE_CHANNELS, h, w]
        )));
    }

    let patches = tape.patchify(image, cfg.patch_size)?;
    let projected = tape.matmul(patches, bound.var("embed.weight")?)?;
    let embedded = tape.add_bias(projected, bound.var("embed.bias")?)?;

    // Class token occupies row 0.
    let cls = bound.var("cls_token")?;
    let with_cls = tape.concat(&[cls, embedded], 0)?;
    let mut x = tape.add(with_cls, bound.var("pos_embed")?)?;

    for layer in 0..cfg.depth {
        let p = format!("layer{layer}");
        let normed = tape.layernorm(
            x,
            bound.var(&format!("{p}.ln1.gamma"))?,
            bound.var(&format!("{p}.ln1.beta"))?,
            LN_EPS,
        )?;
        let attn = msa_from_params(tape, normed, bound, &format!("{p}.attn"), cfg.heads)?;
        x = tape.add(x, attn)?;

        let normed = tape.layernorm(
            x,
            bound.var(&format!("{p}.ln2.gamma"))?,
            bound.var(&format!("{p}.ln2.beta"))?,
            LN_EPS,
        )?;
        let h1 = tape.matmul(normed, bound.var(&format!("{p}.ffn.w1"))?)?;
        let h1 = tape.add_bias(h1, bound.var(&format!("{p}.ffn.b1"))?)?;
        let act = tape.activation(h1, cfg.activation);
        let h2 = tape.matmul(act, bound.var(&format!("{p}.ffn.w2"))?)?;
        let ffn = tape.add_bias(h2, bound.var(&format!("{p}.ffn.b2"))?)?;
        x = tape.add(x, ffn)?;
    }

    let cls_row = tape.narrow(x, 0, 0, 1)?;
    Ok(tape.reshape(cls_row, &[cfg.embed_dim])?)
}

/// Convenience wrapper running [`vit_forward`] on a fresh tape.
pub fn forward_image<T: evit_tensor::Element>(
    image: &Tensor<T>,
    cfg: &ViTConfig,
    params: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let img = tape.leaf(image.clone());
    let bound = params.bind(&mut tape);
    let out = vit_forward(&mut tape, img, cfg, &bound)?;
    Ok(tape.value(out).clone())
}
