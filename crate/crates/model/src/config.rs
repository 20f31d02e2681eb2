//! Hyperparameter records for the backbone and the ViT reference.
//!
//! Every architecture choice is explicit and serializable; the JSON mirror of
//! [`BackboneConfig`] rejects unknown keys.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
pub use evit_tensor::Activation;

pub const NUM_STAGES: usize = 4;

/// Spatial reduction per stage: 4x then 2x three times, a full ratio of 32x.
pub const STAGE_REDUCTIONS: [usize; NUM_STAGES] = [4, 2, 2, 2];
pub const TOTAL_REDUCTION: usize = 32;

/// Complete hyperparameter record for the four-stage pyramid backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Blocks per stage.
    pub stage_depths: [usize; NUM_STAGES],
    /// Channel count per stage; the default configs double each stage.
    pub stage_widths: [usize; NUM_STAGES],
    /// Attention/convolution head count per stage.
    pub stage_heads: [usize; NUM_STAGES],
    /// Key/value pooling stride per stage for the attention branch.
    pub esa_strides: [usize; NUM_STAGES],
    /// Feed-forward expansion ratio (hidden width = ratio * width).
    pub lffn_ratio: f64,
    /// Depthwise locality convolution inside the feed-forward block.
    #[serde(default = "default_true")]
    pub lffn_depthwise: bool,
    /// Neighborhood size of the convolutional attention; must be odd.
    pub mhca_kernel: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Per-stage indices of blocks that are transformer (LTB) blocks; all
    /// other blocks are convolution (ECB) blocks.
    pub ltb_positions: [Vec<usize>; NUM_STAGES],
    pub image_channels: usize,
}

fn default_true() -> bool {
    true
}

fn default_activation() -> Activation {
    Activation::Gelu
}

impl BackboneConfig {
    /// Desk-scale default: widths double per stage, transformer blocks close
    /// stages 3 and 4.
    pub fn tiny() -> Self {
        Self {
            stage_depths: [2, 2, 2, 2],
            stage_widths: [32, 64, 128, 256],
            stage_heads: [1, 2, 4, 8],
            esa_strides: [8, 4, 2, 1],
            lffn_ratio: 3.0,
            lffn_depthwise: true,
            mhca_kernel: 3,
            activation: Activation::Gelu,
            ltb_positions: [vec![], vec![], vec![1], vec![1]],
            image_channels: 3,
        }
    }

    /// Smallest trainable configuration; used by the toy training loop.
    pub fn micro() -> Self {
        Self {
            stage_depths: [1, 1, 1, 1],
            stage_widths: [8, 16, 32, 64],
            stage_heads: [1, 2, 4, 8],
            esa_strides: [8, 4, 2, 1],
            lffn_ratio: 2.0,
            lffn_depthwise: true,
            mhca_kernel: 3,
            activation: Activation::Gelu,
            ltb_positions: [vec![], vec![], vec![0], vec![0]],
            image_channels: 3,
        }
    }

    /// Reduced widths for finite-difference sweeps, where every parameter
    /// element costs two forward passes.
    pub fn nano() -> Self {
        Self {
            stage_depths: [1, 1, 1, 1],
            stage_widths: [4, 8, 8, 8],
            stage_heads: [1, 2, 2, 2],
            esa_strides: [8, 4, 2, 1],
            lffn_ratio: 2.0,
            lffn_depthwise: true,
            mhca_kernel: 3,
            activation: Activation::Gelu,
            ltb_positions: [vec![], vec![], vec![0], vec![0]],
            image_channels: 3,
        }
    }

    /// Hidden width of the feed-forward block for a stage width.
    pub fn lffn_hidden(&self, width: usize) -> Result<usize> {
        let exact = self.lffn_ratio * width as f64;
        let hidden = exact.round();
        if hidden < 1.0 || (exact - hidden).abs() > 1e-9 {
            return Err(ModelError::config(format!(
                "lffn_ratio {} * width {width} must be a positive integer",
                self.lffn_ratio
            )));
        }
        Ok(hidden as usize)
    }

    pub fn has_ltb(&self, stage: usize) -> bool {
        !self.ltb_positions[stage].is_empty()
    }

    pub fn is_ltb(&self, stage: usize, block: usize) -> bool {
        self.ltb_positions[stage].contains(&block)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 {
            return Err(ModelError::config("image_channels must be >= 1"));
        }
        if self.mhca_kernel == 0 || self.mhca_kernel % 2 == 0 {
            return Err(ModelError::config(format!(
                "mhca_kernel must be odd, got {}",
                self.mhca_kernel
            )));
        }
        for stage in 0..NUM_STAGES {
            let (w, h) = (self.stage_widths[stage], self.stage_heads[stage]);
            if w == 0 || h == 0 {
                return Err(ModelError::config(format!(
                    "stage {stage}: width and heads must be >= 1"
                )));
            }
            if w % h != 0 {
                return Err(ModelError::config(format!(
                    "stage {stage}: width {w} not divisible by heads {h}"
                )));
            }
            if self.esa_strides[stage] == 0 {
                return Err(ModelError::config(format!(
                    "stage {stage}: esa stride must be >= 1"
                )));
            }
            self.lffn_hidden(w)?;
            for &pos in &self.ltb_positions[stage] {
                if pos >= self.stage_depths[stage] {
                    return Err(ModelError::config(format!(
                        "stage {stage}: ltb position {pos} >= depth {}",
                        self.stage_depths[stage]
                    )));
                }
            }
            if self.has_ltb(stage) {
                if w % 2 != 0 {
                    return Err(ModelError::config(format!(
                        "stage {stage}: transformer blocks need an even width, got {w}"
                    )));
                }
                if (w / 2) % h != 0 {
                    return Err(ModelError::config(format!(
                        "stage {stage}: attention half-width {} not divisible by heads {h}",
                        w / 2
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| ModelError::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Lattice side lengths per stage for an input of the given size.
    pub fn stage_lattices(&self, h: usize, w: usize) -> Result<[(usize, usize); NUM_STAGES]> {
        if h % TOTAL_REDUCTION != 0 || w % TOTAL_REDUCTION != 0 {
            return Err(ModelError::config(format!(
                "input {h}x{w} must be divisible by {TOTAL_REDUCTION}"
            )));
        }
        let mut out = [(0, 0); NUM_STAGES];
        let (mut ch, mut cw) = (h, w);
        for (stage, &r) in STAGE_REDUCTIONS.iter().enumerate() {
            ch /= r;
            cw /= r;
            out[stage] = (ch, cw);
        }
        Ok(out)
    }
}

/// Configuration of the vanilla ViT encoder used as reference and oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_ratio: f64,
    pub image_size: (usize, usize),
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if self.patch_size == 0 || h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(ModelError::config(format!(
                "image {h}x{w} not divisible by patch size {}",
                self.patch_size
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(ModelError::config(format!(
                "embed dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        let hidden = self.ffn_ratio * self.embed_dim as f64;
        if hidden < 1.0 || (hidden - hidden.round()).abs() > 1e-9 {
            return Err(ModelError::config(
                "ffn_ratio * embed_dim must be a positive integer",
            ));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_size.0 / self.patch_size) * (self.image_size.1 / self.patch_size)
    }

    pub fn ffn_hidden(&self) -> usize {
        (self.ffn_ratio * self.embed_dim as f64).round() as usize
    }
}
