//! Closed-form parameter and compute accounting.
//!
//! Compute is tallied in multiply-accumulates of the linear layers (matrix
//! products and convolutions). Layer norms, activations, bias additions,
//! residual sums and the element-wise mask product are not counted.

use std::fmt;

use super::MstConfig;
use crate::error::{dim_err, Result};

/// How a multiply-accumulate is converted to FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlopConvention {
    /// One FLOP per MAC, the figure most architecture tables quote.
    #[default]
    MacAsFlop,
    /// A multiply and an add per MAC.
    TwoPerMac,
}

impl FlopConvention {
    pub fn flops(self, macs: u64) -> u64 {
        match self {
            FlopConvention::MacAsFlop => macs,
            FlopConvention::TwoPerMac => 2 * macs,
        }
    }
}

/// Per-component totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Breakdown {
    pub embed_head: u64,
    pub attention: u64,
    pub ffn: u64,
    pub layer_norm: u64,
    pub sampling: u64,
    pub mask_guidance: u64,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.embed_head + self.attention + self.ffn + self.layer_norm + self.sampling + self.mask_guidance
    }

    fn rows(&self) -> [(&'static str, u64); 6] {
        [
            ("embed/head", self.embed_head),
            ("attention", self.attention),
            ("ffn", self.ffn),
            ("layer-norm", self.layer_norm),
            ("sampling", self.sampling),
            ("mask-guidance", self.mask_guidance),
        ]
    }
}

impl fmt::Display for Breakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.rows() {
            writeln!(f, "  {name:<14} {v:>14}")?;
        }
        write!(f, "  {:<14} {:>14}", "total", self.total())
    }
}

fn u(x: usize) -> u64 {
    x as u64
}

/// Trainable scalar count, by component.
pub fn param_breakdown(cfg: &MstConfig) -> Result<Breakdown> {
    cfg.validate()?;
    let (c, nl, r) = (u(cfg.channels), u(cfg.n_lambda), u(cfg.ffn_ratio));
    let mut b = Breakdown { embed_head: (c * nl * 9 + c) + (nl * c * 9 + nl), ..Breakdown::default() };
    for stage in 0..3 {
        let ci = u(cfg.stage_channels(stage));
        let heads = u(cfg.stage_heads(stage));
        // Encoder and decoder levels share a depth; the bottleneck is alone.
        let blocks = u(cfg.depths[stage]) * if stage < 2 { 2 } else { 1 };
        let ln_per_block = if cfg.use_smsa { 4 } else { 2 };
        b.layer_norm += blocks * ln_per_block * ci;
        if cfg.use_smsa {
            b.attention += blocks * (4 * ci * ci + heads + 2 * 9 * ci);
        }
        b.ffn += blocks * (2 * r * ci * ci + 9 * r * ci);
        if stage < 2 {
            // down (2c×c×4×4), up (2c×c×2×2), fuse (c×2c).
            b.sampling += 32 * ci * ci + 8 * ci * ci + 2 * ci * ci;
        }
        if cfg.use_smsa && cfg.use_mm {
            b.mask_guidance += c * nl + c * c + 25 * c;
            b.mask_guidance += (0..stage).map(|j| 32 * (c << j) * (c << j)).sum::<u64>();
        }
    }
    Ok(b)
}

pub fn count_params(cfg: &MstConfig) -> Result<u64> {
    Ok(param_breakdown(cfg)?.total())
}

/// Multiply-accumulates of one forward pass on an `H×W` scene, by component.
pub fn mac_breakdown(cfg: &MstConfig, h: usize, w: usize) -> Result<Breakdown> {
    cfg.validate()?;
    if h == 0 || w == 0 || !h.is_multiple_of(4) || !w.is_multiple_of(4) {
        return Err(dim_err!("spatial extents {h}×{w} must be positive multiples of 4"));
    }
    let (c, nl, r) = (u(cfg.channels), u(cfg.n_lambda), u(cfg.ffn_ratio));
    let hw = u(h * w);
    let mut b = Breakdown { embed_head: 2 * hw * nl * c * 9, ..Breakdown::default() };
    for stage in 0..3 {
        let ci = u(cfg.stage_channels(stage));
        let heads = u(cfg.stage_heads(stage));
        let px = hw >> (2 * stage);
        let blocks = u(cfg.depths[stage]) * if stage < 2 { 2 } else { 1 };
        if cfg.use_smsa {
            // Projections, the two attention products and the position branch.
            b.attention += blocks * (4 * px * ci * ci + 2 * px * ci * ci / heads + 2 * 9 * px * ci);
        }
        b.ffn += blocks * (2 * r * px * ci * ci + 9 * r * px * ci);
        if stage < 2 {
            // down: (px/4)·2c·c·16; up: (px/4)·2c·c·4; fuse: px·2c·c.
            b.sampling += 8 * px * ci * ci + 2 * px * ci * ci + 2 * px * ci * ci;
        }
    }
    if cfg.use_smsa && cfg.use_mm {
        let wide = u(h * (w + cfg.step * (cfg.n_lambda - 1)));
        for stage in 0..3 {
            b.mask_guidance += wide * (c * nl + c * c + 25 * c);
            b.mask_guidance += (0..stage).map(|j| (hw >> (2 * (j + 1))) * 32 * (c << j) * (c << j)).sum::<u64>();
        }
    }
    Ok(b)
}

pub fn count_macs(cfg: &MstConfig, h: usize, w: usize) -> Result<u64> {
    Ok(mac_breakdown(cfg, h, w)?.total())
}

pub fn count_flops(cfg: &MstConfig, h: usize, w: usize, convention: FlopConvention) -> Result<u64> {
    Ok(convention.flops(count_macs(cfg, h, w)?))
}
