use std::fmt::Write as _;

use crate::error::{MstError, Result};

/// What the network is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// The shift-back cube `H`.
    #[default]
    Plain,
    /// `H ⊙ M*`, the masked input used by earlier CNN reconstructors.
    Legacy,
}

impl InputMode {
    fn as_str(self) -> &'static str {
        match self {
            InputMode::Plain => "plain",
            InputMode::Legacy => "legacy",
        }
    }
}

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MstConfig {
    /// Base feature width `C`.
    pub channels: usize,
    pub n_lambda: usize,
    /// Dispersion step `d` in pixels per band.
    pub step: usize,
    /// Blocks per level: (stage 0, stage 1, bottleneck).
    pub depths: [usize; 3],
    /// Channels per attention head; stage `i` has `2^i·C / head_dim` heads.
    pub head_dim: usize,
    pub ffn_ratio: usize,
    pub use_smsa: bool,
    pub use_mm: bool,
    pub input_mode: InputMode,
}

pub const PRESETS: [&str; 5] = ["mst-s", "mst-m", "mst-l", "toy", "baseline"];

impl MstConfig {
    fn full_sized(depths: [usize; 3]) -> Self {
        Self {
            channels: 28,
            n_lambda: 28,
            step: 2,
            depths,
            head_dim: 28,
            ffn_ratio: 5,
            use_smsa: true,
            use_mm: true,
            input_mode: InputMode::Plain,
        }
    }

    pub fn mst_s() -> Self {
        Self::full_sized([2, 2, 2])
    }

    pub fn mst_m() -> Self {
        Self::full_sized([2, 4, 4])
    }

    pub fn mst_l() -> Self {
        Self::full_sized([4, 7, 5])
    }

    /// MST-S topology with the attention branch and mask guidance removed.
    pub fn baseline() -> Self {
        Self { use_smsa: false, use_mm: false, ..Self::mst_s() }
    }

    /// Desk-scale model for 8-band toy scenes.
    pub fn toy() -> Self {
        Self { channels: 8, n_lambda: 8, head_dim: 8, depths: [1, 1, 1], ..Self::mst_s() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mst-s" => Ok(Self::mst_s()),
            "mst-m" => Ok(Self::mst_m()),
            "mst-l" => Ok(Self::mst_l()),
            "toy" => Ok(Self::toy()),
            "baseline" => Ok(Self::baseline()),
            other => Err(MstError::Config(format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")))),
        }
    }

    /// Feature width of stage `i`.
    pub fn stage_channels(&self, stage: usize) -> usize {
        self.channels << stage
    }

    pub fn stage_heads(&self, stage: usize) -> usize {
        self.stage_channels(stage) / self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MstError::Config(m));
        if self.channels == 0 || self.n_lambda == 0 || self.head_dim == 0 || self.ffn_ratio == 0 {
            return bad("channels, n_lambda, head_dim and ffn_ratio must be positive".into());
        }
        if self.depths.contains(&0) {
            return bad(format!("depths must be positive, got {:?}", self.depths));
        }
        for stage in 0..3 {
            if !self.stage_channels(stage).is_multiple_of(self.head_dim) {
                return bad(format!(
                    "stage {stage} width {} not divisible by head_dim {}",
                    self.stage_channels(stage),
                    self.head_dim
                ));
            }
        }
        Ok(())
    }

    /// `key = value` lines, readable by [`MstConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let [a, b, c] = self.depths;
        writeln!(s, "channels = {}", self.channels).unwrap();
        writeln!(s, "n_lambda = {}", self.n_lambda).unwrap();
        writeln!(s, "step = {}", self.step).unwrap();
        writeln!(s, "depths = {a},{b},{c}").unwrap();
        writeln!(s, "head_dim = {}", self.head_dim).unwrap();
        writeln!(s, "ffn_ratio = {}", self.ffn_ratio).unwrap();
        writeln!(s, "use_smsa = {}", self.use_smsa).unwrap();
        writeln!(s, "use_mm = {}", self.use_mm).unwrap();
        writeln!(s, "input_mode = {}", self.input_mode.as_str()).unwrap();
        s
    }

    /// Parses `key = value` lines. A `preset` key, if present, must come
    /// first and seeds the defaults; other keys override. Blank lines and
    /// `#` comments are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::mst_s();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| MstError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let num = |v: &str| -> Result<usize> {
                v.parse().map_err(|_| MstError::Config(format!("line {}: {key} expects an integer", lineno + 1)))
            };
            let flag = |v: &str| -> Result<bool> {
                v.parse().map_err(|_| MstError::Config(format!("line {}: {key} expects true/false", lineno + 1)))
            };
            match key {
                "preset" => cfg = Self::preset(value)?,
                "channels" => cfg.channels = num(value)?,
                "n_lambda" => cfg.n_lambda = num(value)?,
                "step" => cfg.step = num(value)?,
                "depths" => {
                    let parts: Vec<usize> = value.split(',').map(|p| num(p.trim())).collect::<Result<_>>()?;
                    cfg.depths = parts
                        .try_into()
                        .map_err(|_| MstError::Config(format!("line {}: depths needs three values", lineno + 1)))?;
                }
                "head_dim" => cfg.head_dim = num(value)?,
                "ffn_ratio" => cfg.ffn_ratio = num(value)?,
                "use_smsa" => cfg.use_smsa = flag(value)?,
                "use_mm" => cfg.use_mm = flag(value)?,
                "input_mode" => {
                    cfg.input_mode = match value {
                        "plain" => InputMode::Plain,
                        "legacy" => InputMode::Legacy,
                        _ => {
                            return Err(MstError::Config(format!("line {}: input_mode is plain or legacy", lineno + 1)))
                        }
                    }
                }
                other => return Err(MstError::Config(format!("line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
