//! Mask-guided mechanism: turns the dispersed coded aperture into a learned,
//! per-stage attention map that re-weights the S-MSA value tokens.
//!
//! For stage `i`:
//!
//! ```text
//! u    = W1 · M_s                              (conv1×1, N_λ → C)
//! M′_s = u ⊙ (1 + sigmoid(dw5(W2 · u)))        (upper path × gated lower path)
//! M′   = shift_back(M′_s)                      (full resolution, integer step d)
//! M′_i = down_i(… down_1(M′))                  (i stride-2 conv4×4, doubling channels)
//! ```

use crate::attention;
use crate::cassi::{self, HsiCube, Mask2D};
use crate::error::{MstError, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng64;
use crate::tensor::{Scalar, Tape, Var};

/// Stages served by the mask branch (two encoder levels plus bottleneck).
pub const STAGES: usize = 3;

/// Mask-branch weights for one stage.
#[derive(Debug, Clone)]
pub struct MmParams {
    pub stage: usize,
    /// `C×N_λ×1×1`.
    pub w1: ParamId,
    /// `C×C×1×1`.
    pub w2: ParamId,
    /// Depth-wise `C×1×5×5`.
    pub dw5: ParamId,
    /// `stage` downsamplers, `2^{j+1}C × 2^jC × 4 × 4`.
    pub downs: Vec<ParamId>,
}

impl MmParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        stage: usize,
        n_lambda: usize,
        channels: usize,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if stage >= STAGES {
            return Err(MstError::Config(format!("mask stage {stage} out of range 0..{STAGES}")));
        }
        let c = channels;
        let w1 = store.add_uniform(format!("{prefix}.w1"), &[c, n_lambda, 1, 1], n_lambda, rng);
        let w2 = store.add_uniform(format!("{prefix}.w2"), &[c, c, 1, 1], c, rng);
        let dw5 = store.add_uniform(format!("{prefix}.dw5"), &[c, 1, 5, 5], 25, rng);
        let downs = (0..stage)
            .map(|j| {
                let cin = c << j;
                store.add_uniform(format!("{prefix}.down{j}"), &[2 * cin, cin, 4, 4], cin * 16, rng)
            })
            .collect();
        Ok(Self { stage, w1, w2, dw5, downs })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w1, self.w2, self.dw5];
        ids.extend(&self.downs);
        ids
    }
}

/// Whether the sigmoid-gated lower path contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gate {
    #[default]
    Learned,
    /// δ ≡ 0, so `M′_s = W1·M_s`.
    Disabled,
}

/// Stage-`i` mask attention `M′_i` (`2^iC × H/2^i × W/2^i`) from a
/// channel-first shifted mask `N_λ × H × (W + d(N_λ−1))`.
pub fn mask_attention<T: Scalar>(
    tape: &mut Tape<T>,
    shifted_mask: Var,
    p: &MmParams,
    b: &Binding,
    step: usize,
    gate: Gate,
) -> Result<Var> {
    let [n_lambda, _, wide] = *tape.shape(shifted_mask) else {
        return Err(crate::error::dim_err!("shifted mask must be N_λ×H×W′, got {:?}", tape.shape(shifted_mask)));
    };
    let scene_w = wide
        .checked_sub(step * (n_lambda - 1))
        .filter(|&w| w > 0)
        .ok_or_else(|| crate::error::dim_err!("shifted mask width {wide} too small for step {step}"))?;
    let c = tape.shape(b.var(p.dw5))[0];
    let u = tape.conv2d(shifted_mask, b.var(p.w1), 1, 0, 1)?;
    let gated = match gate {
        Gate::Learned => {
            let z = tape.conv2d(u, b.var(p.w2), 1, 0, 1)?;
            let z = tape.conv2d(z, b.var(p.dw5), 1, 2, c)?;
            let s = tape.sigmoid(z);
            let s1 = tape.add_const(s, T::one());
            tape.mul(u, s1)?
        }
        Gate::Disabled => u,
    };
    let mut m = tape.shift_window(gated, step, n_lambda, scene_w)?;
    for &down in &p.downs {
        m = tape.conv2d(m, b.var(down), 2, 1, 1)?;
    }
    Ok(m)
}

/// `head_j = (M_j ⊙ V_j) A_j`.
pub fn guided_head<T: Scalar>(tape: &mut Tape<T>, m: Var, v: Var, a: Var) -> Result<Var> {
    let weighted = tape.mul(m, v)?;
    attention::apply_attention(tape, weighted, a)
}

/// Input of earlier CNN reconstructors: the shift-back cube masked by `M*`.
pub fn legacy_mask_input<T: Scalar>(h: &HsiCube<T>, m: &Mask2D<T>) -> Result<HsiCube<T>> {
    cassi::modulate(h, m)
}
