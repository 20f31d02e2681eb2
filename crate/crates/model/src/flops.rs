//! Analytic parameter and multiply-accumulate accounting.
//!
//! Both reports are computed layer-by-layer from the configuration alone and
//! are checked against independent routes: the parameter count against the
//! live store enumeration, the MAC total against the tape's instrumented
//! counters during an actual forward pass.

use serde::Serialize;

use crate::config::{BackboneConfig, NUM_STAGES, STAGE_REDUCTIONS};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    PatchEmbed,
    Ecb,
    Ltb,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockParams {
    pub stage: usize,
    pub name: String,
    pub kind: BlockKind,
    pub params: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamReport {
    pub blocks: Vec<BlockParams>,
}

impl ParamReport {
    pub fn total(&self) -> u64 {
        self.blocks.iter().map(|b| b.params).sum()
    }
}

fn conv_params(c_out: u64, c_in_per_group: u64, k: u64) -> u64 {
    c_out * c_in_per_group * k * k + c_out
}

fn norm_params(c: u64) -> u64 {
    2 * c
}

fn mhca_params(d: u64, heads: u64, k: u64) -> u64 {
    conv_params(d, d / heads, k) + norm_params(d) + conv_params(d, d, 1)
}

fn lffn_params(d: u64, hidden: u64, depthwise: bool) -> u64 {
    let dw = if depthwise {
        conv_params(hidden, 1, 3)
    } else {
        0
    };
    conv_params(hidden, d, 1) + dw + conv_params(d, hidden, 1)
}

fn esa_params(d: u64, heads: u64) -> u64 {
    let dh = d / heads;
    3 * heads * dh * dh + d * d
}

/// Analytic parameter count per block; the total equals the live
/// [`crate::params::ParamStore`] enumeration exactly.
pub fn count_params(cfg: &BackboneConfig) -> Result<ParamReport> {
    cfg.validate()?;
    let mut blocks = Vec::new();
    let k = cfg.mhca_kernel as u64;
    let mut c_in = cfg.image_channels as u64;
    for stage in 0..NUM_STAGES {
        let d = cfg.stage_widths[stage] as u64;
        let heads = cfg.stage_heads[stage] as u64;
        let hidden = cfg.lffn_hidden(cfg.stage_widths[stage])? as u64;

        let embed = if STAGE_REDUCTIONS[stage] == 4 {
            conv_params(d, c_in, 3) + norm_params(d) + conv_params(d, d, 3)
        } else {
            conv_params(d, c_in, 3)
        };
        blocks.push(BlockParams {
            stage,
            name: format!("stage{stage}.embed"),
            kind: BlockKind::PatchEmbed,
            params: embed,
        });

        for block in 0..cfg.stage_depths[stage] {
            let (kind, params) = if cfg.is_ltb(stage, block) {
                let half = d / 2;
                let p = norm_params(half)
                    + esa_params(half, heads)
                    + mhca_params(half, heads, k)
                    + conv_params(d, d, 1)
                    + lffn_params(d, hidden, cfg.lffn_depthwise);
                (BlockKind::Ltb, p)
            } else {
                let p = mhca_params(d, heads, k) + lffn_params(d, hidden, cfg.lffn_depthwise);
                (BlockKind::Ecb, p)
            };
            blocks.push(BlockParams {
                stage,
                name: format!("stage{stage}.block{block}"),
                kind,
                params,
            });
        }
        c_in = d;
    }
    Ok(ParamReport { blocks })
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockFlops {
    pub stage: usize,
    pub name: String,
    pub kind: BlockKind,
    /// MACs spent in convolutions (grouped, depthwise, pointwise, embedding).
    pub conv_macs: u64,
    /// MACs spent in attention projections (q/k/v and the output map).
    pub projection_macs: u64,
    /// MACs spent on the attention matrix itself (scores and value mix);
    /// scales as N * (N / s^2) * width.
    pub attention_macs: u64,
}

impl BlockFlops {
    pub fn total(&self) -> u64 {
        self.conv_macs + self.projection_macs + self.attention_macs
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlopReport {
    pub input: (usize, usize),
    pub blocks: Vec<BlockFlops>,
}

impl FlopReport {
    pub fn total_macs(&self) -> u64 {
        self.blocks.iter().map(|b| b.total()).sum()
    }

    pub fn attention_macs(&self) -> u64 {
        self.blocks.iter().map(|b| b.attention_macs).sum()
    }
}

fn conv_macs(c_out: u64, h: u64, w: u64, c_in_per_group: u64, k: u64) -> u64 {
    c_out * h * w * c_in_per_group * k * k
}

fn mhca_macs(d: u64, heads: u64, k: u64, h: u64, w: u64) -> u64 {
    conv_macs(d, h, w, d / heads, k) + conv_macs(d, h, w, d, 1)
}

fn lffn_macs(d: u64, hidden: u64, depthwise: bool, h: u64, w: u64) -> u64 {
    let dw = if depthwise {
        conv_macs(hidden, h, w, 1, 3)
    } else {
        0
    };
    conv_macs(hidden, h, w, d, 1) + dw + conv_macs(d, h, w, hidden, 1)
}

/// Attention projections: q/k/v per head plus the head-merge output map.
fn esa_projection_macs(d: u64, heads: u64, n: u64) -> u64 {
    let dh = d / heads;
    3 * heads * n * dh * dh + n * d * d
}

/// The quadratic term: scores `N x (N/s^2)` and the value mix, per head.
pub fn esa_attention_macs(d: u64, n: u64, s: u64) -> u64 {
    let m = n / (s * s);
    2 * n * m * d
}

/// Per-block MAC accounting for a forward pass at the given input size.
/// The grand total equals the tape's instrumented MAC counter exactly.
pub fn count_flops(cfg: &BackboneConfig, h_in: usize, w_in: usize) -> Result<FlopReport> {
    cfg.validate()?;
    let lattices = cfg.stage_lattices(h_in, w_in)?;
    let k = cfg.mhca_kernel as u64;
    let mut blocks = Vec::new();
    let mut c_in = cfg.image_channels as u64;
    for stage in 0..NUM_STAGES {
        let d = cfg.stage_widths[stage] as u64;
        let heads = cfg.stage_heads[stage] as u64;
        let s = cfg.esa_strides[stage] as u64;
        let hidden = cfg.lffn_hidden(cfg.stage_widths[stage])? as u64;
        let (h, w) = (lattices[stage].0 as u64, lattices[stage].1 as u64);
        let n = h * w;

        let embed = if STAGE_REDUCTIONS[stage] == 4 {
            conv_macs(d, h * 2, w * 2, c_in, 3) + conv_macs(d, h, w, d, 3)
        } else {
            conv_macs(d, h, w, c_in, 3)
        };
        blocks.push(BlockFlops {
            stage,
            name: format!("stage{stage}.embed"),
            kind: BlockKind::PatchEmbed,
            conv_macs: embed,
            projection_macs: 0,
            attention_macs: 0,
        });

        for block in 0..cfg.stage_depths[stage] {
            let entry = if cfg.is_ltb(stage, block) {
                let half = d / 2;
                BlockFlops {
                    stage,
                    name: format!("stage{stage}.block{block}"),
                    kind: BlockKind::Ltb,
                    conv_macs: mhca_macs(half, heads, k, h, w)
                        + conv_macs(d, h, w, d, 1)
                        + lffn_macs(d, hidden, cfg.lffn_depthwise, h, w),
                    projection_macs: esa_projection_macs(half, heads, n),
                    attention_macs: esa_attention_macs(half, n, s),
                }
            } else {
                BlockFlops {
                    stage,
                    name: format!("stage{stage}.block{block}"),
                    kind: BlockKind::Ecb,
                    conv_macs: mhca_macs(d, heads, k, h, w)
                        + lffn_macs(d, hidden, cfg.lffn_depthwise, h, w),
                    projection_macs: 0,
                    attention_macs: 0,
                }
            };
            blocks.push(entry);
        }
        c_in = d;
    }
    Ok(FlopReport {
        input: (h_in, w_in),
        blocks,
    })
}
