//! CASSI forward model: coded-aperture modulation, dispersion shear, detector
//! integration with optional noise, and shift-back initialisation.
//!
//! Cubes are `H×W×N_λ`, row-major. The reference wavelength is channel 0, so
//! channel `n` is displaced by `d·n` columns and a measurement is
//! `H×(W + d·(N_λ−1))` wide. All shifts are whole pixels.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{dim_err, MstError, Result};
use crate::rng::{self, Rng64};
use crate::tensor::{kernels, Scalar, Tensor};

/// First and last wavelength (nm) of the default band set.
pub const BAND_START_NM: f64 = 450.0;
pub const BAND_END_NM: f64 = 650.0;
pub const DEFAULT_BANDS: usize = 28;

/// `n` band centres evenly spaced over 450–650 nm.
pub fn default_wavelengths(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![BAND_START_NM];
    }
    (0..n).map(|i| BAND_START_NM + (BAND_END_NM - BAND_START_NM) * i as f64 / (n - 1) as f64).collect()
}

/// Spatial-spectral cube `H×W×N_λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube<T = f32> {
    data: Tensor<T>,
    wavelengths: Vec<f64>,
}

impl<T: Scalar> HsiCube<T> {
    pub fn new(data: Tensor<T>, wavelengths: Vec<f64>) -> Result<Self> {
        let [_, _, n] = *data.shape() else {
            return Err(dim_err!("cube must be H×W×N, got {:?}", data.shape()));
        };
        if wavelengths.len() != n {
            return Err(dim_err!("{} wavelengths for {n} channels", wavelengths.len()));
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MstError::Config("wavelengths must be strictly increasing".into()));
        }
        Ok(Self { data, wavelengths })
    }

    /// Cube with the default 450–650 nm band set.
    pub fn from_tensor(data: Tensor<T>) -> Result<Self> {
        let n = *data.shape().get(2).ok_or_else(|| dim_err!("cube must be H×W×N, got {:?}", data.shape()))?;
        Self::new(data, default_wavelengths(n))
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn get(&self, y: usize, x: usize, n: usize) -> T {
        self.data.data()[(y * self.width() + x) * self.bands() + n]
    }

    /// Channel-first copy `N_λ×H×W`, the layout the network consumes.
    pub fn to_chw(&self) -> Tensor<T> {
        kernels::permute(&self.data, &[2, 0, 1]).expect("rank-3 permute")
    }

    pub fn from_chw(chw: &Tensor<T>, wavelengths: Vec<f64>) -> Result<Self> {
        Self::new(kernels::permute(chw, &[1, 2, 0])?, wavelengths)
    }

    /// One spectral plane as an `H×W` tensor.
    pub fn channel(&self, n: usize) -> Tensor<T> {
        let (h, w, nb) = (self.height(), self.width(), self.bands());
        Tensor::from_fn(&[h, w], |i| self.data.data()[i * nb + n])
    }

    pub fn cast<U: Scalar>(&self) -> HsiCube<U> {
        HsiCube { data: self.data.cast(), wavelengths: self.wavelengths.clone() }
    }
}

/// Coded aperture `M*`, `H×W` transmittance.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D<T = f32> {
    data: Tensor<T>,
}

impl<T: Scalar> Mask2D<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.ndim() != 2 {
            return Err(dim_err!("mask must be H×W, got {:?}", data.shape()));
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn cast<U: Scalar>(&self) -> Mask2D<U> {
        Mask2D { data: self.data.cast() }
    }
}

/// Sheared cube `H×(W + d·(N_λ−1))×N_λ`; columns outside a channel's
/// window are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Sheared<T = f32> {
    data: Tensor<T>,
    step: usize,
}

/// Dispersed modulated scene, `F″`.
pub type ShiftedCube<T = f32> = Sheared<T>;
/// Dispersed coded aperture, `M_s`.
pub type ShiftedMask<T = f32> = Sheared<T>;

impl<T: Scalar> Sheared<T> {
    pub fn new(data: Tensor<T>, step: usize) -> Result<Self> {
        let [_, w, n] = *data.shape() else {
            return Err(dim_err!("sheared cube must be H×W′×N, got {:?}", data.shape()));
        };
        if w <= step * (n - 1) {
            return Err(dim_err!("sheared width {w} too small for step {step} and {n} channels"));
        }
        Ok(Self { data, step })
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn bands(&self) -> usize {
        self.data.shape()[2]
    }

    /// Width of the unsheared scene.
    pub fn scene_width(&self) -> usize {
        self.data.shape()[1] - self.step * (self.bands() - 1)
    }

    pub fn to_chw(&self) -> Tensor<T> {
        kernels::permute(&self.data, &[2, 0, 1]).expect("rank-3 permute")
    }
}

/// Additive detector noise `G`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Noise {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    /// Poisson photon noise at a `bits`-bit full-well scale.
    Shot {
        bits: u32,
    },
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Noise::None => write!(f, "none"),
            Noise::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            Noise::Shot { bits } => write!(f, "shot:{bits}"),
        }
    }
}

impl FromStr for Noise {
    type Err = MstError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MstError::Config(format!("noise must be none | gaussian:SIGMA | shot:BITS, got {s:?}"));
        match s.split_once(':') {
            None if s == "none" => Ok(Noise::None),
            Some(("gaussian", v)) => {
                let sigma: f64 = v.parse().map_err(|_| bad())?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(bad());
                }
                Ok(Noise::Gaussian { sigma })
            }
            Some(("shot", v)) => {
                let bits: u32 = v.parse().map_err(|_| bad())?;
                if !(1..=30).contains(&bits) {
                    return Err(bad());
                }
                Ok(Noise::Shot { bits })
            }
            _ => Err(bad()),
        }
    }
}

/// Compressed snapshot `Y`, `H×(W + d·(N_λ−1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<T = f32> {
    data: Tensor<T>,
    noise: Noise,
}

impl<T: Scalar> Measurement<T> {
    pub fn new(data: Tensor<T>, noise: Noise) -> Result<Self> {
        if data.ndim() != 2 {
            return Err(dim_err!("measurement must be H×W′, got {:?}", data.shape()));
        }
        Ok(Self { data, noise })
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }
}

/// `F′(:,:,n) = F(:,:,n) ⊙ M*`.
pub fn modulate<T: Scalar>(f: &HsiCube<T>, m: &Mask2D<T>) -> Result<HsiCube<T>> {
    if (f.height(), f.width()) != (m.height(), m.width()) {
        return Err(dim_err!("mask {}×{} does not match cube {}×{}", m.height(), m.width(), f.height(), f.width()));
    }
    let n = f.bands();
    let md = m.data().data();
    let data = Tensor::from_fn(f.data().shape(), |i| f.data().data()[i] * md[i / n]);
    HsiCube::new(data, f.wavelengths().to_vec())
}

/// Writes channel `n` at column offset `d·n` of a zeroed `H×(W+d(N−1))×N`
/// buffer.
pub fn disperse<T: Scalar>(fp: &HsiCube<T>, d: usize) -> ShiftedCube<T> {
    let (h, w, n) = (fp.height(), fp.width(), fp.bands());
    let wide = w + d * (n - 1);
    let mut out = Tensor::zeros(&[h, wide, n]);
    let src = fp.data().data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..n {
                dst[(y * wide + x + d * c) * n + c] = src[(y * w + x) * n + c];
            }
        }
    }
    Sheared { data: out, step: d }
}

/// `Y = Σ_n F″(:,:,n) + G`, summing channels in ascending order.
pub fn measure<T: Scalar>(fpp: &ShiftedCube<T>, noise: Noise, rng: &mut Rng64) -> Measurement<T> {
    let [h, wide, n] = *fpp.data().shape() else { unreachable!("validated at construction") };
    let src = fpp.data().data();
    let mut y = Tensor::from_fn(&[h, wide], |p| {
        let mut acc = T::zero();
        for c in 0..n {
            acc += src[p * n + c];
        }
        acc
    });
    apply_noise(&mut y, noise, rng);
    Measurement { data: y, noise }
}

fn apply_noise<T: Scalar>(y: &mut Tensor<T>, noise: Noise, rng: &mut Rng64) {
    match noise {
        Noise::None => {}
        Noise::Gaussian { sigma } => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                for v in y.data_mut() {
                    *v += T::lit(normal.sample(rng));
                }
            }
        }
        Noise::Shot { bits } => {
            let peak = y.max_abs().as_f64();
            if peak <= 0.0 {
                return;
            }
            let scale = ((1u64 << bits) - 1) as f64 / peak;
            for v in y.data_mut() {
                let lambda = v.as_f64().max(0.0) * scale;
                let counts = if lambda > 0.0 { Poisson::new(lambda).expect("positive rate").sample(rng) } else { 0.0 };
                *v = T::lit(counts / scale);
            }
        }
    }
}

/// Shift-back initialisation: channel `n` is columns `[d·n, d·n + W)` of `Y`.
pub fn init_input<T: Scalar>(y: &Measurement<T>, d: usize, n_lambda: usize) -> Result<HsiCube<T>> {
    if n_lambda == 0 {
        return Err(MstError::Config("n_lambda must be positive".into()));
    }
    let span = d * (n_lambda - 1);
    if y.width() <= span {
        return Err(dim_err!("measurement width {} inconsistent with d={d}, N_λ={n_lambda}", y.width()));
    }
    let (h, wide) = (y.height(), y.width());
    let w = wide - span;
    let src = y.data().data();
    let data = Tensor::from_fn(&[h, w, n_lambda], |i| {
        let c = i % n_lambda;
        let x = (i / n_lambda) % w;
        let r = i / (n_lambda * w);
        src[r * wide + x + d * c]
    });
    HsiCube::from_tensor(data)
}

/// Replicates `M*` into `N_λ` channels, channel `n` sheared by `d·n`.
pub fn shift_mask<T: Scalar>(m: &Mask2D<T>, d: usize, n_lambda: usize) -> Result<ShiftedMask<T>> {
    if n_lambda == 0 {
        return Err(MstError::Config("n_lambda must be positive".into()));
    }
    let (h, w) = (m.height(), m.width());
    let md = m.data().data();
    let stacked = Tensor::from_fn(&[h, w, n_lambda], |i| md[i / n_lambda]);
    Ok(disperse(&HsiCube::from_tensor(stacked)?, d))
}

/// Inverse of the shear: channel `n` is the window at offset `d·n`.
pub fn shift_back<T: Scalar>(s: &Sheared<T>) -> Result<HsiCube<T>> {
    let [h, wide, n] = *s.data().shape() else { unreachable!("validated at construction") };
    let w = s.scene_width();
    let d = s.step();
    let src = s.data().data();
    let data = Tensor::from_fn(&[h, w, n], |i| {
        let c = i % n;
        let x = (i / n) % w;
        let r = i / (n * w);
        src[(r * wide + x + d * c) * n + c]
    });
    HsiCube::from_tensor(data)
}

/// Synthetic reflectance scene: a sum of spatial Gaussian blobs, each with a
/// smooth spectral profile, clipped to `[0, 1]`.
pub fn generate_scene(seed: u64, h: usize, w: usize, n_lambda: usize) -> Result<HsiCube<f32>> {
    if h == 0 || w == 0 || n_lambda == 0 {
        return Err(dim_err!("scene extents must be positive, got {h}×{w}×{n_lambda}"));
    }
    let mut rng = rng::seeded(seed);
    let blobs = 6 + rng.random_range(0..5);
    let scale = h.min(w) as f64;
    let mut acc = vec![0.05f64; h * w * n_lambda];
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let sigma = scale * rng.random_range(0.08..0.3);
        let amp = rng.random_range(0.3..0.8);
        let peak = rng.random_range(-0.2..1.2);
        let width = rng.random_range(0.25..0.8);
        let floor = rng.random_range(0.0..0.4);
        let profile: Vec<f64> = (0..n_lambda)
            .map(|c| {
                let t = if n_lambda == 1 { 0.5 } else { c as f64 / (n_lambda - 1) as f64 };
                floor + (1.0 - floor) * (-(t - peak).powi(2) / (2.0 * width * width)).exp()
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let s = amp * (-r2 / (2.0 * sigma * sigma)).exp();
                for (c, p) in profile.iter().enumerate() {
                    acc[(y * w + x) * n_lambda + c] += s * p;
                }
            }
        }
    }
    let data = Tensor::new(&[h, w, n_lambda], acc.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())?;
    HsiCube::from_tensor(data)
}

/// Binary Bernoulli(`density`) coded aperture.
pub fn generate_mask(seed: u64, h: usize, w: usize, density: f64) -> Result<Mask2D<f32>> {
    if h == 0 || w == 0 {
        return Err(dim_err!("mask extents must be positive, got {h}×{w}"));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(MstError::Config(format!("mask density {density} outside [0, 1]")));
    }
    let mut rng = rng::seeded(seed);
    let data = Tensor::from_fn(&[h, w], |_| if rng.random_bool(density) { 1.0 } else { 0.0 });
    Mask2D::new(data)
}
