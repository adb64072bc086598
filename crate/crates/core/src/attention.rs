//! Spectral-wise multi-head self-attention (S-MSA).
//!
//! Each spectral feature map is a token: for a feature `X ∈ R^{HW×C}` and
//! head `j` of width `d_h`, the attention map is the `d_h×d_h` matrix
//! `A_j = softmax(σ_j · K_jᵀ Q_j)` and `head_j = V_j A_j`. The softmax runs
//! over the first (key-channel) axis, so every output channel is a convex
//! combination of value channels. The cost of the two products is
//! `2·H·W·C²/N` multiply-accumulates, linear in the spatial size.

use crate::error::{dim_err, MstError, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng64;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Learnable tensors of one S-MSA layer over `C` channels and `N` heads.
#[derive(Debug, Clone)]
pub struct SmsaParams {
    pub channels: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wout: ParamId,
    /// One temperature per head, shape `[N]`.
    pub sigma: ParamId,
    pub pos1: ParamId,
    pub pos2: ParamId,
}

impl SmsaParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        heads: usize,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(MstError::Config(format!("{channels} channels not divisible into {heads} heads")));
        }
        let d_h = channels / heads;
        let c = channels;
        Ok(Self {
            channels,
            heads,
            wq: store.add_uniform(format!("{prefix}.wq"), &[c, c], c, rng),
            wk: store.add_uniform(format!("{prefix}.wk"), &[c, c], c, rng),
            wv: store.add_uniform(format!("{prefix}.wv"), &[c, c], c, rng),
            wout: store.add_uniform(format!("{prefix}.wout"), &[c, c], c, rng),
            sigma: store.add(format!("{prefix}.sigma"), Tensor::full(&[heads], T::lit(1.0 / (d_h as f64).sqrt()))),
            pos1: store.add_uniform(format!("{prefix}.pos1"), &[c, 1, 3, 3], 9, rng),
            pos2: store.add_uniform(format!("{prefix}.pos2"), &[c, 1, 3, 3], 9, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn param_ids(&self) -> [ParamId; 7] {
        [self.wq, self.wk, self.wv, self.wout, self.sigma, self.pos1, self.pos2]
    }
}

/// Reshapes a channel-first feature `C×H×W` into tokens `HW×C`.
pub fn to_tokens<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [c, h, w] = *tape.shape(x) else {
        return Err(dim_err!("expected C×H×W feature, got {:?}", tape.shape(x)));
    };
    let flat = tape.reshape(x, &[c, h * w])?;
    tape.transpose(flat)
}

/// Inverse of [`to_tokens`].
pub fn from_tokens<T: Scalar>(tape: &mut Tape<T>, tokens: Var, h: usize, w: usize) -> Result<Var> {
    let c = tape.shape(tokens)[1];
    let t = tape.transpose(tokens)?;
    tape.reshape(t, &[c, h, w])
}

/// `Q = X·W_Q`, `K = X·W_K`, `V = X·W_V` on tokens `HW×C`.
pub fn project_qkv<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &SmsaParams, b: &Binding) -> Result<(Var, Var, Var)> {
    if tape.shape(x).len() != 2 || tape.shape(x)[1] != p.channels {
        return Err(dim_err!("tokens {:?} do not have {} channels", tape.shape(x), p.channels));
    }
    Ok((tape.matmul(x, b.var(p.wq))?, tape.matmul(x, b.var(p.wk))?, tape.matmul(x, b.var(p.wv))?))
}

/// Columns `[j·d_h, (j+1)·d_h)` of an `HW×C` token matrix.
pub fn split_head<T: Scalar>(tape: &mut Tape<T>, t: Var, j: usize, d_h: usize) -> Result<Var> {
    tape.narrow(t, 1, j * d_h, d_h)
}

/// `A_j = softmax_axis0(σ_j · K_jᵀ Q_j)`, a `d_h×d_h` map whose columns sum
/// to one. `sigma_j` is a one-element tensor.
pub fn attention_map<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, sigma_j: Var) -> Result<Var> {
    let kt = tape.transpose(k)?;
    let gram = tape.matmul(kt, q)?;
    let scaled = tape.mul_scalar(gram, sigma_j)?;
    tape.softmax(scaled, 0)
}

/// `head_j = V_j A_j`.
pub fn apply_attention<T: Scalar>(tape: &mut Tape<T>, v: Var, a: Var) -> Result<Var> {
    tape.matmul(v, a)
}

/// Unguided head: `V_j · softmax(σ_j K_jᵀ Q_j)`.
pub fn spectral_attention<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, sigma_j: Var) -> Result<Var> {
    let a = attention_map(tape, q, k, sigma_j)?;
    apply_attention(tape, v, a)
}

/// Position embedding `f_p`: depth-wise conv3×3 → GELU → depth-wise conv3×3
/// applied to the value tokens laid out as `C×H×W`.
pub fn position_embedding<T: Scalar>(
    tape: &mut Tape<T>,
    v: Var,
    p: &SmsaParams,
    b: &Binding,
    h: usize,
    w: usize,
) -> Result<Var> {
    let c = p.channels;
    let img = from_tokens(tape, v, h, w)?;
    let y = tape.conv2d(img, b.var(p.pos1), 1, 1, c)?;
    let y = tape.gelu(y);
    tape.conv2d(y, b.var(p.pos2), 1, 1, c)
}

/// Concatenates heads along channels, projects with `W`, and optionally adds
/// `f_p(V)`. Returns a `C×H×W` feature.
pub fn aggregate_heads<T: Scalar>(
    tape: &mut Tape<T>,
    heads: &[Var],
    v: Var,
    p: &SmsaParams,
    b: &Binding,
    h: usize,
    w: usize,
    with_position: bool,
) -> Result<Var> {
    let cat = tape.concat(heads, 1)?;
    let proj = tape.matmul(cat, b.var(p.wout))?;
    let out = from_tokens(tape, proj, h, w)?;
    if with_position {
        let pe = position_embedding(tape, v, p, b, h, w)?;
        tape.add(out, pe)
    } else {
        Ok(out)
    }
}

/// Options for a full S-MSA forward.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmsaOptions {
    /// Skip `f_p(V)`.
    pub without_position: bool,
}

/// Full S-MSA on a `C×H×W` feature. `guidance`, when given, is the mask
/// attention `M` as `HW×C` tokens; each head then uses `(M_j ⊙ V_j) A_j`.
pub fn smsa_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &SmsaParams,
    b: &Binding,
    guidance: Option<Var>,
    opts: SmsaOptions,
) -> Result<Var> {
    let [_, h, w] = *tape.shape(x) else {
        return Err(dim_err!("expected C×H×W feature, got {:?}", tape.shape(x)));
    };
    let tokens = to_tokens(tape, x)?;
    let (q, k, v) = project_qkv(tape, tokens, p, b)?;
    let d_h = p.head_dim();
    let mut heads = Vec::with_capacity(p.heads);
    for j in 0..p.heads {
        let qj = split_head(tape, q, j, d_h)?;
        let kj = split_head(tape, k, j, d_h)?;
        let vj = split_head(tape, v, j, d_h)?;
        let sj = tape.narrow(b.var(p.sigma), 0, j, 1)?;
        let a = attention_map(tape, qj, kj, sj)?;
        let head = match guidance {
            Some(m) => {
                let mj = split_head(tape, m, j, d_h)?;
                crate::mask::guided_head(tape, mj, vj, a)?
            }
            None => apply_attention(tape, vj, a)?,
        };
        heads.push(head);
    }
    aggregate_heads(tape, &heads, v, p, b, h, w, !opts.without_position)
}

/// Closed-form cost of the attention products, `2·H·W·C²/N` MACs.
pub fn smsa_mac_count(h: usize, w: usize, c: usize, n: usize) -> Result<u64> {
    if n == 0 || !c.is_multiple_of(n) {
        return Err(MstError::Config(format!("{c} channels not divisible into {n} heads")));
    }
    Ok(2 * (h * w) as u64 * (c * c) as u64 / n as u64)
}

/// Plain-loop S-MSA attention core on `HW×C` matrices that counts every
/// multiply-accumulate of the `K_jᵀQ_j` and `V_jA_j` products.
pub fn attend_counted<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    sigma: &[T],
    macs: &mut u64,
) -> Result<Tensor<T>> {
    let [hw, c] = *q.shape() else {
        return Err(dim_err!("expected HW×C queries, got {:?}", q.shape()));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(dim_err!("Q/K/V shapes differ"));
    }
    let n = sigma.len();
    if n == 0 || c % n != 0 {
        return Err(MstError::Config(format!("{c} channels not divisible into {n} heads")));
    }
    let d_h = c / n;
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = Tensor::zeros(&[hw, c]);
    let mut a = vec![T::zero(); d_h * d_h];
    for (j, &s) in sigma.iter().enumerate() {
        let base = j * d_h;
        for r in 0..d_h {
            for col in 0..d_h {
                let mut acc = T::zero();
                for t in 0..hw {
                    acc += kd[t * c + base + r] * qd[t * c + base + col];
                    *macs += 1;
                }
                a[r * d_h + col] = s * acc;
            }
        }
        for col in 0..d_h {
            let max = (0..d_h).map(|r| a[r * d_h + col]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for r in 0..d_h {
                let e = (a[r * d_h + col] - max).exp();
                a[r * d_h + col] = e;
                sum += e;
            }
            for r in 0..d_h {
                a[r * d_h + col] = a[r * d_h + col] / sum;
            }
        }
        let od = out.data_mut();
        for t in 0..hw {
            for col in 0..d_h {
                let mut acc = T::zero();
                for r in 0..d_h {
                    acc += vd[t * c + base + r] * a[r * d_h + col];
                    *macs += 1;
                }
                od[t * c + base + col] = acc;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn eye(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    fn identity_params(c: usize, heads: usize) -> (ParamStore<f64>, SmsaParams) {
        let mut store = ParamStore::new();
        let p = SmsaParams::new(&mut store, "a", c, heads, &mut rng::seeded(0)).unwrap();
        for id in [p.wq, p.wk, p.wv, p.wout] {
            *store.get_mut(id) = eye(c);
        }
        *store.get_mut(p.pos1) = Tensor::zeros(&[c, 1, 3, 3]);
        *store.get_mut(p.pos2) = Tensor::zeros(&[c, 1, 3, 3]);
        (store, p)
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut store = ParamStore::<f32>::new();
        assert!(matches!(SmsaParams::new(&mut store, "a", 6, 4, &mut rng::seeded(0)), Err(MstError::Config(_))));
        assert!(smsa_mac_count(1, 1, 6, 4).is_err());
    }

    #[test]
    fn sigma_starts_at_inverse_sqrt_head_dim() {
        let mut store = ParamStore::<f64>::new();
        let p = SmsaParams::new(&mut store, "a", 8, 2, &mut rng::seeded(0)).unwrap();
        assert_eq!(store.get(p.sigma).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_projections_copy_tokens() {
        let (store, p) = identity_params(4, 1);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_fn(&[6, 4], |i| i as f64 - 3.0));
        let (q, k, v) = project_qkv(&mut tape, x, &p, &b).unwrap();
        for t in [q, k, v] {
            assert_eq!(tape.value(t), tape.value(x));
        }
        let z = tape.constant(Tensor::zeros(&[6, 4]));
        let (q, _, _) = project_qkv(&mut tape, z, &p, &b).unwrap();
        assert_eq!(tape.value(q).max_abs(), 0.0);
    }

    #[test]
    fn single_channel_head_is_value() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::from_fn(&[5, 1], |i| i as f64));
        let k = tape.constant(Tensor::from_fn(&[5, 1], |i| 2.0 - i as f64));
        let v = tape.constant(Tensor::from_fn(&[5, 1], |i| (i as f64).cos()));
        let s = tape.constant(Tensor::scalar(3.7));
        let head = spectral_attention(&mut tape, q, k, v, s).unwrap();
        assert_eq!(tape.value(head), tape.value(v));
    }

    #[test]
    fn zero_temperature_averages_values() {
        let mut r = rng::seeded(4);
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(rng::uniform(&mut r, &[7, 3], -1.0, 1.0));
        let k = tape.constant(rng::uniform(&mut r, &[7, 3], -1.0, 1.0));
        let vv = rng::uniform::<f64>(&mut r, &[7, 3], -1.0, 1.0);
        let v = tape.constant(vv.clone());
        let s = tape.constant(Tensor::scalar(0.0));
        let head = spectral_attention(&mut tape, q, k, v, s).unwrap();
        for t in 0..7 {
            let mean = (0..3).map(|c| vv.get(&[t, c])).sum::<f64>() / 3.0;
            for c in 0..3 {
                assert!((tape.value(head).get(&[t, c]) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregate_with_identity_out_and_zero_pos_is_concat() {
        let (store, p) = identity_params(4, 2);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let h0 = tape.constant(Tensor::from_fn(&[6, 2], |i| i as f64));
        let h1 = tape.constant(Tensor::from_fn(&[6, 2], |i| -(i as f64)));
        let v = tape.constant(Tensor::ones(&[6, 4]));
        let out = aggregate_heads(&mut tape, &[h0, h1], v, &p, &b, 2, 3, true).unwrap();
        assert_eq!(tape.shape(out), &[4, 2, 3]);
        for t in 0..6 {
            for c in 0..4 {
                let expect = if c < 2 { (t * 2 + c) as f64 } else { -((t * 2 + c - 2) as f64) };
                assert_eq!(tape.value(out).data()[c * 6 + t], expect);
            }
        }
    }

    #[test]
    fn position_embedding_of_zero_is_zero() {
        let mut store = ParamStore::<f64>::new();
        let p = SmsaParams::new(&mut store, "a", 4, 1, &mut rng::seeded(9)).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let v = tape.constant(Tensor::zeros(&[9, 4]));
        let pe = position_embedding(&mut tape, v, &p, &b, 3, 3).unwrap();
        assert_eq!(tape.value(pe).max_abs(), 0.0);
    }

    #[test]
    fn mac_formula_cases() {
        assert_eq!(smsa_mac_count(1, 1, 1, 1).unwrap(), 2);
        assert_eq!(smsa_mac_count(16, 16, 8, 2).unwrap(), 16384);
        assert_eq!(smsa_mac_count(16, 16, 8, 4).unwrap() * 2, smsa_mac_count(16, 16, 8, 2).unwrap());
    }

    #[test]
    fn instrumented_kernel_counts_16384() {
        let mut r = rng::seeded(2);
        let q = rng::uniform::<f64>(&mut r, &[256, 8], -1.0, 1.0);
        let mut macs = 0;
        attend_counted(&q, &q, &q, &[0.5, 0.5], &mut macs).unwrap();
        assert_eq!(macs, 16384);
    }
}
