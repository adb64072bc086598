//! Optimiser, schedule and the synthetic-data training loop.
//!
//! Each step draws a patch from one of the scenes, optionally augments it,
//! simulates the snapshot, shift-back initialises the network input,
//! reconstructs, and takes one Adam step on the loss.

pub mod augment;
pub mod loss;
pub mod metrics;

use std::io::Write;

use rand::Rng;

pub use augment::{augment, Augmentation, Flip};
pub use loss::{loss, loss_tape, LossReport, DEFAULT_LAMBDA_SCL};
pub use metrics::{psnr, psnr_per_channel, ssim, ssim_per_channel};

use crate::cassi::{self, HsiCube, Mask2D, Noise};
use crate::error::{dim_err, MstError, Result};
use crate::model::MstModel;
use crate::params::ParamStore;
use crate::rng::{self, Rng64};
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs between learning-rate halvings.
    pub halve_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    /// Square patch edge; must be a multiple of 4.
    pub patch: usize,
    pub seed: u64,
    pub augment: bool,
    pub noise: Noise,
    pub lambda_scl: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            halve_every: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 1,
            steps_per_epoch: 100,
            batch: 5,
            patch: 256,
            seed: 0,
            augment: true,
            noise: Noise::None,
            lambda_scl: DEFAULT_LAMBDA_SCL,
        }
    }
}

impl TrainConfig {
    /// Single-scene settings for desk-scale runs.
    pub fn toy(patch: usize, steps: usize, seed: u64) -> Self {
        Self { epochs: 1, steps_per_epoch: steps.max(1), batch: 1, patch, seed, augment: false, ..Self::default() }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// `lr · 0.5^⌊epoch / halve_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.halve_every.max(1)).min(1074) as i32;
        self.lr * 0.5f64.powi(halvings)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MstError::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch == 0 || self.steps_per_epoch == 0 {
            return bad("batch and steps_per_epoch must be positive");
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return bad("patch must be a positive multiple of 4");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam needs 0 ≤ β < 1 and ε > 0");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { beta1, beta2, eps, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; `grads[i]` belongs to the `i`-th parameter of the store.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::lit(lr);
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = g else { continue };
            let (pd, gd) = (p.data_mut(), g.data());
            for (((w, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Per-step record of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
}

pub const CSV_HEADER: &str = "step,lr,rmse,scl,total";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6},{:.6},{:.6}", self.step, self.lr, self.loss.rmse, self.loss.scl, self.loss.total)
    }
}

pub fn write_csv(out: &mut impl Write, history: &[StepRecord]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in history {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// One simulated training example.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub gt: HsiCube<T>,
    pub mask: Mask2D<T>,
    pub input: HsiCube<T>,
}

fn crop<T: Scalar>(t: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Tensor<T> {
    let sw = t.shape()[1];
    let inner: usize = t.shape()[2..].iter().product();
    let d = t.data();
    let mut shape = t.shape().to_vec();
    shape[0] = h;
    shape[1] = w;
    Tensor::from_fn(&shape, |i| {
        let k = i % inner;
        let x = (i / inner) % w;
        let y = i / (inner * w);
        d[((y0 + y) * sw + x0 + x) * inner + k]
    })
}

/// Draws a patch, augments it, and runs the optical forward model.
pub fn draw_sample<T: Scalar>(
    rng: &mut Rng64,
    scenes: &[HsiCube<T>],
    mask: &Mask2D<T>,
    tc: &TrainConfig,
    step: usize,
) -> Result<Sample<T>> {
    let scene = &scenes[rng.random_range(0..scenes.len())];
    let p = tc.patch;
    if scene.height() < p || scene.width() < p || mask.height() < p || mask.width() < p {
        return Err(dim_err!("patch {p} larger than scene or mask"));
    }
    let (y0, x0) = (rng.random_range(0..=scene.height() - p), rng.random_range(0..=scene.width() - p));
    let mut gt = HsiCube::new(crop(scene.data(), y0, x0, p, p), scene.wavelengths().to_vec())?;
    let (my, mx) = (rng.random_range(0..=mask.height() - p), rng.random_range(0..=mask.width() - p));
    let m = Mask2D::new(crop(mask.data(), my, mx, p, p))?;
    if tc.augment {
        gt = Augmentation::sample(rng).apply(&gt);
    }
    let d = step;
    let y = cassi::measure(&cassi::disperse(&cassi::modulate(&gt, &m)?, d), tc.noise, rng);
    let input = cassi::init_input(&y, d, gt.bands())?;
    Ok(Sample { gt, mask: m, input })
}

/// Runs `tc.total_steps()` optimiser steps on `model`, calling `on_step`
/// after every update. Aborts with [`MstError::Diverged`] on a non-finite
/// loss or gradient.
pub fn train_with<T: Scalar>(
    model: &mut MstModel<T>,
    scenes: &[HsiCube<T>],
    mask: &Mask2D<T>,
    tc: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord, &MstModel<T>) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    tc.validate()?;
    if scenes.is_empty() {
        return Err(MstError::Config("no training scenes".into()));
    }
    let cfg = model.config().clone();
    if let Some(s) = scenes.iter().find(|s| s.bands() != cfg.n_lambda) {
        return Err(dim_err!("scene has {} bands, model expects {}", s.bands(), cfg.n_lambda));
    }
    let mut rng = rng::seeded(tc.seed);
    let mut adam = Adam::new(model.params(), tc.beta1, tc.beta2, tc.eps);
    let mut history = Vec::with_capacity(tc.total_steps());
    let batch_scale = T::lit(1.0 / tc.batch as f64);

    for step in 0..tc.total_steps() {
        let epoch = step / tc.steps_per_epoch;
        let lr = tc.lr_at(epoch);
        let mut tape = Tape::new();
        let binding = model.params().bind(&mut tape, true);
        let mut totals = Vec::with_capacity(tc.batch);
        let (mut rmse, mut scl) = (0.0, 0.0);
        for _ in 0..tc.batch {
            let s = draw_sample(&mut rng, scenes, mask, tc, cfg.step)?;
            let fed = model.prepare_input(&s.input, &s.mask)?;
            let input = tape.constant(fed.to_chw());
            let ms = tape.constant(cassi::shift_mask(&s.mask, cfg.step, cfg.n_lambda)?.to_chw());
            let gt = tape.constant(s.gt.to_chw());
            let out = model.forward_tape(&mut tape, &binding, input, ms, None)?;
            let (t, r, c) = loss_tape(&mut tape, out, gt, tc.lambda_scl)?;
            rmse += tape.value(r).data()[0].as_f64();
            scl += tape.value(c).data()[0].as_f64();
            totals.push(t);
        }
        let mut total = totals[0];
        for &t in &totals[1..] {
            total = tape.add(total, t)?;
        }
        let total = tape.scale(total, batch_scale);
        let report = LossReport::new(rmse / tc.batch as f64, scl / tc.batch as f64, tc.lambda_scl);
        if !report.is_finite() {
            return Err(MstError::Diverged { step, detail: format!("loss {report:?}") });
        }
        tape.backward(total)?;
        let grads: Vec<Option<Tensor<T>>> = binding.vars().iter().map(|&v| tape.grad(v).cloned()).collect();
        for (id, g) in model.params().ids().zip(&grads) {
            if g.as_ref().is_some_and(|g| !g.is_finite()) {
                return Err(MstError::Diverged {
                    step,
                    detail: format!("non-finite gradient in {}", model.params().name(id)),
                });
            }
        }
        adam.update(model.params_mut(), &grads, lr);
        let rec = StepRecord { step, epoch, lr, loss: report };
        on_step(&rec, model)?;
        history.push(rec);
    }
    Ok(history)
}

pub fn train<T: Scalar>(
    model: &mut MstModel<T>,
    scenes: &[HsiCube<T>],
    mask: &Mask2D<T>,
    tc: &TrainConfig,
) -> Result<Vec<StepRecord>> {
    train_with(model, scenes, mask, tc, |_, _| Ok(()))
}
