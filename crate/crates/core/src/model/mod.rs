//! The U-shaped mask-guided spectral-wise transformer.
//!
//! ```text
//! H ─ conv3×3 ─ MSAB×N1 ─┬─ down ─ MSAB×N2 ─┬─ down ─ MSAB×N3 ─ up ─ fuse ─ MSAB×N2 ─ up ─ fuse ─ MSAB×N1 ─ conv3×3 ─ R
//!                        └──────────────────┼───────────────────────┘                       │
//!                                           └───────────────────────────────────────────────┘
//! H′ = H + R
//! ```
//!
//! Stage `i` features are `2^iC × H/2^i × W/2^i`. Downsamplers are
//! kernel-4 stride-2 convolutions doubling channels; upsamplers are
//! kernel-2 stride-2 transposed convolutions halving them; skip fusion is a
//! channel concatenation followed by a bias-free 1×1 convolution.

pub mod audit;
mod config;
mod weights;

pub use config::{InputMode, MstConfig, PRESETS};

use crate::attention::{self, SmsaOptions, SmsaParams};
use crate::cassi::{self, HsiCube, Mask2D};
use crate::error::{dim_err, Result};
use crate::mask::{self, Gate, MmParams};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::{self, Rng64};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Feed-forward branch: conv1×1 (C→rC) → GELU → depth-wise conv3×3 → GELU →
/// conv1×1 (rC→C), all bias-free.
#[derive(Debug, Clone)]
pub struct FfnParams {
    pub expand: ParamId,
    pub depthwise: ParamId,
    pub project: ParamId,
}

impl FfnParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, c: usize, ratio: usize, rng: &mut Rng64) -> Self {
        let hidden = c * ratio;
        Self {
            expand: store.add_uniform(format!("{prefix}.expand"), &[hidden, c, 1, 1], c, rng),
            depthwise: store.add_uniform(format!("{prefix}.depthwise"), &[hidden, 1, 3, 3], 9, rng),
            project: store.add_uniform(format!("{prefix}.project"), &[c, hidden, 1, 1], hidden, rng),
        }
    }
}

pub fn ffn<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &FfnParams, b: &Binding) -> Result<Var> {
    let hidden = tape.shape(b.var(p.depthwise))[0];
    let y = tape.conv2d(x, b.var(p.expand), 1, 0, 1)?;
    let y = tape.gelu(y);
    let y = tape.conv2d(y, b.var(p.depthwise), 1, 1, hidden)?;
    let y = tape.gelu(y);
    tape.conv2d(y, b.var(p.project), 1, 0, 1)
}

/// Mask-guided spectral-wise attention block:
/// `x + MS-MSA(LN(x))`, then `+ FFN(LN(·))`, layer norms over channels.
#[derive(Debug, Clone)]
pub struct MsabBlock {
    /// Layer norm and S-MSA; `None` when the attention branch is ablated.
    pub attention: Option<((ParamId, ParamId), SmsaParams)>,
    pub ln2: (ParamId, ParamId),
    pub ffn: FfnParams,
}

impl MsabBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c: usize,
        heads: usize,
        cfg: &MstConfig,
        rng: &mut Rng64,
    ) -> Result<Self> {
        let ln = |store: &mut ParamStore<T>, name: &str| {
            (
                store.add(format!("{prefix}.{name}.gamma"), Tensor::ones(&[c])),
                store.add(format!("{prefix}.{name}.beta"), Tensor::zeros(&[c])),
            )
        };
        let attention = if cfg.use_smsa {
            let ln1 = ln(store, "ln1");
            Some((ln1, SmsaParams::new(store, &format!("{prefix}.attn"), c, heads, rng)?))
        } else {
            None
        };
        let ln2 = ln(store, "ln2");
        let ffn = FfnParams::new(store, &format!("{prefix}.ffn"), c, cfg.ffn_ratio, rng);
        Ok(Self { attention, ln2, ffn })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, b: &Binding, guidance: Option<Var>) -> Result<Var> {
        let mut x = x;
        if let Some((ln1, attn)) = &self.attention {
            let n = tape.layer_norm(x, 0, b.var(ln1.0), b.var(ln1.1))?;
            let a = attention::smsa_forward(tape, n, attn, b, guidance, SmsaOptions::default())?;
            x = tape.add(x, a)?;
        }
        let n = tape.layer_norm(x, 0, b.var(self.ln2.0), b.var(self.ln2.1))?;
        let f = ffn(tape, n, &self.ffn, b)?;
        tape.add(x, f)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    up: ParamId,
    fuse: ParamId,
    blocks: Vec<MsabBlock>,
}

/// Network parameters plus the structure that addresses them.
#[derive(Debug, Clone)]
pub struct MstModel<T = f32> {
    cfg: MstConfig,
    store: ParamStore<T>,
    embed: (ParamId, ParamId),
    encoder: Vec<(Vec<MsabBlock>, ParamId)>,
    bottleneck: Vec<MsabBlock>,
    /// Index `i` rebuilds stage `i` from stage `i + 1`.
    decoder: Vec<Decoder>,
    head: (ParamId, ParamId),
    guidance: Vec<MmParams>,
}

impl<T: Scalar> MstModel<T> {
    /// Builds a freshly initialised network.
    pub fn new(cfg: MstConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::seeded(seed);
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let nl = cfg.n_lambda;

        let embed = (
            store.add_uniform("embed.weight", &[c, nl, 3, 3], nl * 9, &mut rng),
            store.add_uniform("embed.bias", &[c], nl * 9, &mut rng),
        );

        let guidance = if cfg.use_mm && cfg.use_smsa {
            (0..mask::STAGES)
                .map(|i| MmParams::new(&mut store, &format!("mask.{i}"), i, nl, c, &mut rng))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let blocks = |store: &mut ParamStore<T>, prefix: &str, stage: usize, n: usize, rng: &mut Rng64| {
            (0..n)
                .map(|k| {
                    MsabBlock::new(
                        store,
                        &format!("{prefix}.{k}"),
                        cfg.stage_channels(stage),
                        cfg.stage_heads(stage),
                        &cfg,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()
        };

        let mut encoder = Vec::with_capacity(2);
        for stage in 0..2 {
            let bl = blocks(&mut store, &format!("encoder.{stage}.blocks"), stage, cfg.depths[stage], &mut rng)?;
            let cin = cfg.stage_channels(stage);
            let down = store.add_uniform(format!("encoder.{stage}.down"), &[2 * cin, cin, 4, 4], cin * 16, &mut rng);
            encoder.push((bl, down));
        }
        let bottleneck = blocks(&mut store, "bottleneck.blocks", 2, cfg.depths[2], &mut rng)?;

        let mut decoder = Vec::with_capacity(2);
        for stage in [1usize, 0] {
            let cout = cfg.stage_channels(stage);
            let up = store.add_uniform(format!("decoder.{stage}.up"), &[2 * cout, cout, 2, 2], 2 * cout * 4, &mut rng);
            let fuse = store.add_uniform(format!("decoder.{stage}.fuse"), &[cout, 2 * cout, 1, 1], 2 * cout, &mut rng);
            let bl = blocks(&mut store, &format!("decoder.{stage}.blocks"), stage, cfg.depths[stage], &mut rng)?;
            decoder.push(Decoder { up, fuse, blocks: bl });
        }
        decoder.reverse();

        let head = (
            store.add_uniform("head.weight", &[nl, c, 3, 3], c * 9, &mut rng),
            store.add_uniform("head.bias", &[nl], c * 9, &mut rng),
        );

        Ok(Self { cfg, store, embed, encoder, bottleneck, decoder, head, guidance })
    }

    pub fn config(&self) -> &MstConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Identifiers of the final convolution `(weight, bias)`.
    pub fn head_params(&self) -> (ParamId, ParamId) {
        self.head
    }

    /// Scalar count of every parameter tensor.
    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    /// Same network with every parameter converted to `U`.
    pub fn cast<U: Scalar>(&self) -> MstModel<U> {
        let mut store = ParamStore::new();
        for (name, t) in self.store.iter() {
            store.add(name, t.cast());
        }
        MstModel {
            cfg: self.cfg.clone(),
            store,
            embed: self.embed,
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck.clone(),
            decoder: self.decoder.clone(),
            head: self.head,
            guidance: self.guidance.clone(),
        }
    }

    pub fn check_extents(&self, h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(4) || !w.is_multiple_of(4) || h == 0 || w == 0 {
            return Err(dim_err!("spatial extents {h}×{w} must be positive multiples of 4"));
        }
        Ok(())
    }

    /// The cube actually fed to the network for a given shift-back input.
    pub fn prepare_input(&self, h: &HsiCube<T>, mask: &Mask2D<T>) -> Result<HsiCube<T>> {
        match self.cfg.input_mode {
            InputMode::Plain => Ok(h.clone()),
            InputMode::Legacy => mask::legacy_mask_input(h, mask),
        }
    }

    /// Records the forward pass. `input` is the prepared cube as
    /// `N_λ×H×W`; `shifted_mask` is `M_s` as `N_λ×H×(W+d(N_λ−1))`.
    /// Returns `input + R`. `stage_features`, when given, receives the
    /// output of every level in order (encoder 0, encoder 1, bottleneck,
    /// decoder 1, decoder 0).
    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        b: &Binding,
        input: Var,
        shifted_mask: Var,
        mut stage_features: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let [nl, h, w] = *tape.shape(input) else {
            return Err(dim_err!("input must be N_λ×H×W, got {:?}", tape.shape(input)));
        };
        if nl != self.cfg.n_lambda {
            return Err(dim_err!("input has {nl} bands, model expects {}", self.cfg.n_lambda));
        }
        self.check_extents(h, w)?;
        let wide = w + self.cfg.step * (nl - 1);
        if tape.shape(shifted_mask) != [nl, h, wide] {
            return Err(dim_err!(
                "shifted mask {:?} does not match input {:?} with step {}",
                tape.shape(shifted_mask),
                [nl, h, w],
                self.cfg.step
            ));
        }

        let guidance: Vec<Var> = self
            .guidance
            .iter()
            .map(|p| {
                let m = mask::mask_attention(tape, shifted_mask, p, b, self.cfg.step, Gate::Learned)?;
                attention::to_tokens(tape, m)
            })
            .collect::<Result<_>>()?;
        let guide = |stage: usize| guidance.get(stage).copied();
        let mut record = |v: Var| {
            if let Some(f) = stage_features.as_deref_mut() {
                f.push(v);
            }
        };

        let x = tape.conv2d(input, b.var(self.embed.0), 1, 1, 1)?;
        let mut x = tape.add_channel_bias(x, b.var(self.embed.1))?;

        let mut skips = Vec::with_capacity(2);
        for (stage, (blocks, down)) in self.encoder.iter().enumerate() {
            for block in blocks {
                x = block.forward(tape, x, b, guide(stage))?;
            }
            record(x);
            skips.push(x);
            x = tape.conv2d(x, b.var(*down), 2, 1, 1)?;
        }
        for block in &self.bottleneck {
            x = block.forward(tape, x, b, guide(2))?;
        }
        record(x);
        for stage in [1usize, 0] {
            let dec = &self.decoder[stage];
            let up = tape.conv2d_transpose(x, b.var(dec.up), 2, 2)?;
            let cat = tape.concat(&[up, skips[stage]], 0)?;
            x = tape.conv2d(cat, b.var(dec.fuse), 1, 0, 1)?;
            for block in &dec.blocks {
                x = block.forward(tape, x, b, guide(stage))?;
            }
            record(x);
        }

        let r = tape.conv2d(x, b.var(self.head.0), 1, 1, 1)?;
        let r = tape.add_channel_bias(r, b.var(self.head.1))?;
        tape.add(input, r)
    }

    /// Reconstructs `H′` from a shift-back cube and the physical mask.
    pub fn reconstruct(&self, h: &HsiCube<T>, mask: &Mask2D<T>) -> Result<HsiCube<T>> {
        if (mask.height(), mask.width()) != (h.height(), h.width()) {
            return Err(dim_err!("mask does not match cube extents"));
        }
        let fed = self.prepare_input(h, mask)?;
        let shifted = cassi::shift_mask(mask, self.cfg.step, self.cfg.n_lambda)?;
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape, false);
        let input = tape.constant(fed.to_chw());
        let ms = tape.constant(shifted.to_chw());
        let out = self.forward_tape(&mut tape, &b, input, ms, None)?;
        HsiCube::from_chw(tape.value(out), h.wavelengths().to_vec())
    }

    /// Full pipeline from a measurement.
    pub fn reconstruct_measurement(&self, y: &cassi::Measurement<T>, mask: &Mask2D<T>) -> Result<HsiCube<T>> {
        let h = cassi::init_input(y, self.cfg.step, self.cfg.n_lambda)?;
        self.reconstruct(&h, mask)
    }
}

impl<T: Scalar> MstModel<T> {
    /// Every parameter named in a block-wise group, for reporting.
    pub fn group_of(name: &str) -> &str {
        let parts: Vec<&str> = name.split('.').collect();
        match parts.as_slice() {
            ["mask", ..] => "mask-guidance",
            [.., "attn", _] => "attention",
            [.., "ffn", _] => "ffn",
            [.., "ln1" | "ln2", _] => "layer-norm",
            ["embed", ..] | ["head", ..] => "embed/head",
            _ => "sampling",
        }
    }
}
