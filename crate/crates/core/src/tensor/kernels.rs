//! Untracked forward and backward kernels.
//!
//! Every kernel fixes its accumulation order. Parallel variants only split
//! work across independent output slices, so each output element is reduced
//! in the same order regardless of the thread count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use rayon::prelude::*;

use super::{split_axis, Scalar, Tensor};
use crate::error::{dim_err, MstError, Result};

static THREADS: AtomicUsize = AtomicUsize::new(0);
static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Intra-op thread count. Defaults to `MST_THREADS` or 1.
pub fn threads() -> usize {
    match THREADS.load(Ordering::Relaxed) {
        0 => {
            let n =
                std::env::var("MST_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0).unwrap_or(1);
            THREADS.store(n, Ordering::Relaxed);
            n
        }
        n => n,
    }
}

pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

fn for_each_chunk<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let n = threads();
    if n <= 1 || out.len() <= chunk {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        let pool = POOL.get_or_init(|| rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool"));
        pool.install(|| out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)));
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

/// `c[i,j] = Σ_p a[i,p]·b[p,j]`, with `p` ascending.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = as_matrix(a)?;
    let (k2, n) = as_matrix(b)?;
    if k != k2 {
        return Err(dim_err!("matmul inner extents differ: {m}x{k} · {k2}x{n}"));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for_each_chunk(&mut out, n, |i, row| {
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (c, &bv) in row.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    });
    Tensor::new(&[m, n], out)
}

fn as_matrix<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(dim_err!("expected a matrix, got shape {s:?}")),
    }
}

pub fn transpose2<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    permute(a, &[1, 0])
}

pub fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
        return Err(dim_err!("invalid permutation {perm:?} for rank {nd}"));
    }
    let in_strides = x.strides();
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; nd];
    let mut out = Vec::with_capacity(x.numel());
    let data = x.data();
    for _ in 0..x.numel() {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

// ---------------------------------------------------------------------------
// Convolution

/// Geometry of a grouped 2-D cross-correlation over `C×H×W` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize, groups: usize) -> Result<Self> {
        let [c_in, h, w] = x_shape else {
            return Err(dim_err!("conv2d input must be C×H×W, got {x_shape:?}"));
        };
        let [c_out, c_in_g, kh, kw] = w_shape else {
            return Err(dim_err!("conv2d weight must be Cout×Cin/g×k×k, got {w_shape:?}"));
        };
        if kh != kw {
            return Err(dim_err!("only square kernels are supported, got {kh}×{kw}"));
        }
        if stride == 0 || groups == 0 {
            return Err(dim_err!("stride and groups must be positive"));
        }
        if c_in % groups != 0 || c_out % groups != 0 || c_in / groups != *c_in_g {
            return Err(dim_err!("channels {c_in}->{c_out} incompatible with groups={groups} and weight {w_shape:?}"));
        }
        let extent = |n: usize| -> Result<usize> {
            let span = n + 2 * pad;
            if span < *kh || !(span - kh).is_multiple_of(stride) {
                return Err(dim_err!("non-integral conv output: ({n}+2·{pad}-{kh})/{stride}"));
            }
            Ok((span - kh) / stride + 1)
        };
        Ok(Self {
            c_in: *c_in,
            h: *h,
            w: *w,
            c_out: *c_out,
            k: *kh,
            stride,
            pad,
            groups,
            h_out: extent(*h)?,
            w_out: extent(*w)?,
        })
    }

    pub fn macs(&self) -> u64 {
        (self.h_out * self.w_out * self.c_out * (self.c_in / self.groups) * self.k * self.k) as u64
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    /// Input coordinate feeding output `o` through kernel tap `t`, if in range.
    #[inline]
    fn src(&self, o: usize, t: usize, n: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
    }
}

/// Grouped cross-correlation. Per output element the reduction runs over
/// (input channel, kernel row, kernel column) in ascending order.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize, groups: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), stride, pad, groups)?;
    let (xd, wd) = (x.data(), w.data());
    let plane = g.h_out * g.w_out;
    let mut out = vec![T::zero(); g.c_out * plane];
    for_each_chunk(&mut out, plane, |oc, dst| {
        let group = oc / g.cout_g();
        for icl in 0..g.cin_g() {
            let ic = group * g.cin_g() + icl;
            let xplane = &xd[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for kh in 0..g.k {
                for kw in 0..g.k {
                    let wv = wd[((oc * g.cin_g() + icl) * g.k + kh) * g.k + kw];
                    for oh in 0..g.h_out {
                        let Some(ih) = g.src(oh, kh, g.h) else { continue };
                        let xrow = &xplane[ih * g.w..(ih + 1) * g.w];
                        let drow = &mut dst[oh * g.w_out..(oh + 1) * g.w_out];
                        for (ow, d) in drow.iter_mut().enumerate() {
                            if let Some(iw) = g.src(ow, kw, g.w) {
                                *d += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[g.c_out, g.h_out, g.w_out], out)
}

pub fn conv2d_grad_input<T: Scalar>(dy: &Tensor<T>, w: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<T>> {
    let (dyd, wd) = (dy.data(), w.data());
    let mut dx = vec![T::zero(); g.c_in * g.h * g.w];
    for_each_chunk(&mut dx, g.h * g.w, |ic, dst| {
        let group = ic / g.cin_g();
        let icl = ic % g.cin_g();
        for oc in group * g.cout_g()..(group + 1) * g.cout_g() {
            let dplane = &dyd[oc * g.h_out * g.w_out..(oc + 1) * g.h_out * g.w_out];
            for kh in 0..g.k {
                for kw in 0..g.k {
                    let wv = wd[((oc * g.cin_g() + icl) * g.k + kh) * g.k + kw];
                    for oh in 0..g.h_out {
                        let Some(ih) = g.src(oh, kh, g.h) else { continue };
                        for ow in 0..g.w_out {
                            if let Some(iw) = g.src(ow, kw, g.w) {
                                dst[ih * g.w + iw] += wv * dplane[oh * g.w_out + ow];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[g.c_in, g.h, g.w], dx)
}

pub fn conv2d_grad_weight<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<T>> {
    let (dyd, xd) = (dy.data(), x.data());
    let taps = g.cin_g() * g.k * g.k;
    let mut dw = vec![T::zero(); g.c_out * taps];
    for_each_chunk(&mut dw, taps, |oc, dst| {
        let group = oc / g.cout_g();
        let dplane = &dyd[oc * g.h_out * g.w_out..(oc + 1) * g.h_out * g.w_out];
        for icl in 0..g.cin_g() {
            let ic = group * g.cin_g() + icl;
            let xplane = &xd[ic * g.h * g.w..(ic + 1) * g.h * g.w];
            for kh in 0..g.k {
                for kw in 0..g.k {
                    let mut acc = T::zero();
                    for oh in 0..g.h_out {
                        let Some(ih) = g.src(oh, kh, g.h) else { continue };
                        for ow in 0..g.w_out {
                            if let Some(iw) = g.src(ow, kw, g.w) {
                                acc += dplane[oh * g.w_out + ow] * xplane[ih * g.w + iw];
                            }
                        }
                    }
                    dst[(icl * g.k + kh) * g.k + kw] = acc;
                }
            }
        }
    });
    Tensor::new(&[g.c_out, g.cin_g(), g.k, g.k], dw)
}

fn check_transpose_cfg(stride: usize, k: usize) -> Result<()> {
    if (stride, k) != (2, 2) {
        return Err(MstError::Unsupported(format!(
            "conv2d_transpose supports kernel 2 / stride 2 only, got kernel {k} / stride {stride}"
        )));
    }
    Ok(())
}

fn transpose_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let [c_in, h, wd] = x.shape() else {
        return Err(dim_err!("conv2d_transpose input must be C×H×W, got {:?}", x.shape()));
    };
    match w.shape() {
        [ci, co, 2, 2] if ci == c_in => Ok((*c_in, *h, *wd, *co)),
        s => Err(dim_err!("conv2d_transpose weight must be {c_in}×Cout×2×2, got {s:?}")),
    }
}

/// Transposed convolution, weight layout `Cin×Cout×2×2`; the adjoint of a
/// kernel-2 stride-2 [`conv2d`] with weight `Cout'×Cin'×2×2` = this weight.
pub fn conv2d_transpose<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, k: usize) -> Result<Tensor<T>> {
    check_transpose_cfg(stride, k)?;
    let (c_in, h, wid, c_out) = transpose_dims(x, w)?;
    let (xd, wd) = (x.data(), w.data());
    let (ho, wo) = (2 * h, 2 * wid);
    let mut out = vec![T::zero(); c_out * ho * wo];
    for_each_chunk(&mut out, ho * wo, |oc, dst| {
        for ic in 0..c_in {
            for a in 0..2 {
                for b in 0..2 {
                    let wv = wd[((ic * c_out + oc) * 2 + a) * 2 + b];
                    for i in 0..h {
                        for j in 0..wid {
                            dst[(2 * i + a) * wo + 2 * j + b] += wv * xd[(ic * h + i) * wid + j];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[c_out, ho, wo], out)
}

pub fn conv2d_transpose_grad_input<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (c_in, h, wid, c_out) = transpose_dims(x, w)?;
    let (dyd, wd) = (dy.data(), w.data());
    let wo = 2 * wid;
    let mut dx = vec![T::zero(); c_in * h * wid];
    for_each_chunk(&mut dx, h * wid, |ic, dst| {
        for oc in 0..c_out {
            for a in 0..2 {
                for b in 0..2 {
                    let wv = wd[((ic * c_out + oc) * 2 + a) * 2 + b];
                    for i in 0..h {
                        for j in 0..wid {
                            dst[i * wid + j] += wv * dyd[(oc * 2 * h + 2 * i + a) * wo + 2 * j + b];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(&[c_in, h, wid], dx)
}

pub fn conv2d_transpose_grad_weight<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (c_in, h, wid, c_out) = transpose_dims(x, w)?;
    let (dyd, xd) = (dy.data(), x.data());
    let wo = 2 * wid;
    let mut dw = vec![T::zero(); c_in * c_out * 4];
    for_each_chunk(&mut dw, c_out * 4, |ic, dst| {
        for oc in 0..c_out {
            for a in 0..2 {
                for b in 0..2 {
                    let mut acc = T::zero();
                    for i in 0..h {
                        for j in 0..wid {
                            acc += xd[(ic * h + i) * wid + j] * dyd[(oc * 2 * h + 2 * i + a) * wo + 2 * j + b];
                        }
                    }
                    dst[(oc * 2 + a) * 2 + b] = acc;
                }
            }
        }
    });
    Tensor::new(&[c_in, c_out, 2, 2], dw)
}

/// Adds `bias[c]` to every element of channel `c` of a `C×…` tensor.
pub fn add_channel_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.shape()[0];
    if bias.shape() != [c] {
        return Err(dim_err!("bias shape {:?} does not match {c} channels", bias.shape()));
    }
    let plane = x.numel() / c;
    let mut out = x.clone();
    for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let b = bias.data()[ch];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(out)
}

pub fn channel_sums<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let c = dy.shape()[0];
    let plane = dy.numel() / c;
    Tensor::from_fn(&[c], |ch| {
        let mut acc = T::zero();
        for &v in &dy.data()[ch * plane..(ch + 1) * plane] {
            acc += v;
        }
        acc
    })
}

// ---------------------------------------------------------------------------
// Normalisation and activations

pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let mut max = T::neg_infinity();
            for a in 0..n {
                max = max.max(xd[at(a)]);
            }
            let mut sum = T::zero();
            for a in 0..n {
                let e = (xd[at(a)] - max).exp();
                out[at(a)] = e;
                sum += e;
            }
            for a in 0..n {
                out[at(a)] = out[at(a)] / sum;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// `dx = y ⊙ (dy − Σ_axis dy⊙y)`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = split_axis(y.shape(), axis)?;
    let (yd, dyd) = (y.data(), dy.data());
    let mut dx = vec![T::zero(); y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let mut dot = T::zero();
            for a in 0..n {
                dot += dyd[at(a)] * yd[at(a)];
            }
            for a in 0..n {
                dx[at(a)] = yd[at(a)] * (dyd[at(a)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), dx)
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Saved statistics of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub x_hat: Tensor<T>,
    pub rstd: Vec<T>,
}

/// Normalises along `axis` (biased variance, ε inside the root), then applies
/// `γ[a]·x̂ + β[a]`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    if gamma.shape() != [n] || beta.shape() != [n] {
        return Err(dim_err!(
            "layer_norm affine shapes {:?}/{:?} do not match axis extent {n}",
            gamma.shape(),
            beta.shape()
        ));
    }
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let eps = T::lit(LAYER_NORM_EPS);
    let nn = T::lit(n as f64);
    let mut x_hat = vec![T::zero(); x.numel()];
    let mut y = vec![T::zero(); x.numel()];
    let mut rstd = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let mut mean = T::zero();
            for a in 0..n {
                mean += xd[at(a)];
            }
            mean = mean / nn;
            let mut var = T::zero();
            for a in 0..n {
                let c = xd[at(a)] - mean;
                var += c * c;
            }
            var = var / nn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for a in 0..n {
                let h = (xd[at(a)] - mean) * r;
                x_hat[at(a)] = h;
                y[at(a)] = h * gd[a] + bd[a];
            }
        }
    }
    Ok((Tensor::new(x.shape(), y)?, LayerNormCache { x_hat: Tensor::new(x.shape(), x_hat)?, rstd }))
}

/// Returns `(dx, dγ, dβ)`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    cache: &LayerNormCache<T>,
    axis: usize,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (outer, n, inner) = split_axis(dy.shape(), axis)?;
    let (dyd, hd, gd) = (dy.data(), cache.x_hat.data(), gamma.data());
    let nn = T::lit(n as f64);
    let mut dx = vec![T::zero(); dy.numel()];
    let mut dg = vec![T::zero(); n];
    let mut db = vec![T::zero(); n];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let r = cache.rstd[o * inner + i];
            let mut mean_dh = T::zero();
            let mut mean_dh_h = T::zero();
            for a in 0..n {
                let dh = dyd[at(a)] * gd[a];
                mean_dh += dh;
                mean_dh_h += dh * hd[at(a)];
                dg[a] += dyd[at(a)] * hd[at(a)];
                db[a] += dyd[at(a)];
            }
            mean_dh = mean_dh / nn;
            mean_dh_h = mean_dh_h / nn;
            for a in 0..n {
                let dh = dyd[at(a)] * gd[a];
                dx[at(a)] = r * (dh - mean_dh - hd[at(a)] * mean_dh_h);
            }
        }
    }
    Ok((Tensor::new(dy.shape(), dx)?, Tensor::new(&[n], dg)?, Tensor::new(&[n], db)?))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// ---------------------------------------------------------------------------
// Layout

pub fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    if len == 0 || start + len > n {
        return Err(dim_err!("narrow [{start}, {}) out of extent {n}", start + len));
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::new(&shape, out)
}

/// Adjoint of [`narrow`]: embeds `dy` into zeros of `full_shape`.
pub fn narrow_backward<T: Scalar>(
    dy: &Tensor<T>,
    full_shape: &[usize],
    axis: usize,
    start: usize,
) -> Result<Tensor<T>> {
    let (outer, n, inner) = split_axis(full_shape, axis)?;
    let len = dy.shape()[axis];
    let mut out = Tensor::zeros(full_shape);
    for o in 0..outer {
        let dst = (o * n + start) * inner;
        let src = o * len * inner;
        out.data_mut()[dst..dst + len * inner].copy_from_slice(&dy.data()[src..src + len * inner]);
    }
    Ok(out)
}

pub fn concat<T: Scalar>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
    let mut shape = first.shape().to_vec();
    split_axis(&shape, axis)?;
    let mut total = 0;
    for t in xs {
        let mut probe = t.shape().to_vec();
        if probe.len() != shape.len() {
            return Err(dim_err!("concat rank mismatch"));
        }
        total += probe[axis];
        probe[axis] = shape[axis];
        if probe != shape {
            return Err(dim_err!("concat shape mismatch {:?} vs {:?}", t.shape(), first.shape()));
        }
    }
    shape[axis] = total;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in xs {
            let block = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(&shape, out)
}

/// Per-channel window: `out[c,h,w] = x[c,h,w + step·(c mod period)]`.
pub fn shift_window<T: Scalar>(x: &Tensor<T>, step: usize, period: usize, out_w: usize) -> Result<Tensor<T>> {
    let [c, h, w_in] = *x.shape() else {
        return Err(dim_err!("shift_window expects C×H×W, got {:?}", x.shape()));
    };
    check_window(c, w_in, step, period, out_w)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(c * h * out_w);
    for ch in 0..c {
        let off = step * (ch % period);
        for r in 0..h {
            let base = (ch * h + r) * w_in + off;
            out.extend_from_slice(&xd[base..base + out_w]);
        }
    }
    Tensor::new(&[c, h, out_w], out)
}

pub fn shift_window_backward<T: Scalar>(dy: &Tensor<T>, step: usize, period: usize, in_w: usize) -> Result<Tensor<T>> {
    let [c, h, out_w] = *dy.shape() else {
        return Err(dim_err!("shift_window gradient expects C×H×W"));
    };
    check_window(c, in_w, step, period, out_w)?;
    let mut dx = Tensor::zeros(&[c, h, in_w]);
    for ch in 0..c {
        let off = step * (ch % period);
        for r in 0..h {
            let dst = (ch * h + r) * in_w + off;
            let src = (ch * h + r) * out_w;
            dx.data_mut()[dst..dst + out_w].copy_from_slice(&dy.data()[src..src + out_w]);
        }
    }
    Ok(dx)
}

fn check_window(c: usize, w_in: usize, step: usize, period: usize, out_w: usize) -> Result<()> {
    if period == 0 {
        return Err(dim_err!("shift period must be positive"));
    }
    let max_off = step * (c.min(period) - 1);
    if max_off + out_w > w_in {
        return Err(dim_err!("window of width {out_w} at offset {max_off} exceeds input width {w_in}"));
    }
    Ok(())
}
