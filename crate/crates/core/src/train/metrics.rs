//! Image-quality metrics, computed per spectral channel and averaged.

use crate::cassi::HsiCube;
use crate::error::{dim_err, Result};
use crate::tensor::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check<T: Scalar>(pred: &HsiCube<T>, gt: &HsiCube<T>) -> Result<()> {
    if pred.data().shape() != gt.data().shape() {
        return Err(dim_err!("prediction {:?} vs ground truth {:?}", pred.data().shape(), gt.data().shape()));
    }
    Ok(())
}

fn channels<T: Scalar>(c: &HsiCube<T>) -> Vec<Vec<f64>> {
    let n = c.bands();
    let mut out = vec![Vec::with_capacity(c.height() * c.width()); n];
    for px in c.data().data().chunks(n) {
        for (ch, v) in out.iter_mut().zip(px) {
            ch.push(v.as_f64());
        }
    }
    out
}

/// PSNR of one channel; `+∞` when the channels are identical.
pub fn psnr_channel(pred: &[f64], gt: &[f64], peak: f64) -> f64 {
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr_per_channel<T: Scalar>(pred: &HsiCube<T>, gt: &HsiCube<T>, peak: f64) -> Result<Vec<f64>> {
    check(pred, gt)?;
    Ok(channels(pred).iter().zip(channels(gt).iter()).map(|(p, g)| psnr_channel(p, g, peak)).collect())
}

/// Mean of the per-channel PSNRs in dB. Any identical channel makes the
/// mean `+∞`.
pub fn psnr<T: Scalar>(pred: &HsiCube<T>, gt: &HsiCube<T>, peak: f64) -> Result<f64> {
    Ok(mean(&psnr_per_channel(pred, gt, peak)?))
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

/// Mean SSIM of one `h×w` channel over every fully contained window. The
/// window is 11×11, or the smaller image extent when the channel is tinier.
pub fn ssim_channel(pred: &[f64], gt: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let k = SSIM_WINDOW.min(h).min(w);
    let win = gaussian_window(k);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let g = win[dy * k + dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    let (a, b) = (pred[i], gt[i]);
                    mx += g * a;
                    my += g * b;
                    sxx += g * a * a;
                    syy += g * b * b;
                    sxy += g * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn ssim_per_channel<T: Scalar>(pred: &HsiCube<T>, gt: &HsiCube<T>, peak: f64) -> Result<Vec<f64>> {
    check(pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    Ok(channels(pred)
        .iter()
        .zip(channels(gt).iter())
        .map(|(p, g)| if p == g { 1.0 } else { ssim_channel(p, g, h, w, peak) })
        .collect())
}

pub fn ssim<T: Scalar>(pred: &HsiCube<T>, gt: &HsiCube<T>, peak: f64) -> Result<f64> {
    Ok(mean(&ssim_per_channel(pred, gt, peak)?))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
