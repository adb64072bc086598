//! Central finite-difference gradient checking on 64-bit tapes. Each
//! numeric derivative is a Ridders extrapolation of central differences,
//! which stays accurate where the loss curves sharply.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Initial step of the extrapolated central difference.
pub const FD_EPS: f64 = 1e-3;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Flat indices probed for a tensor of `numel` elements: all of them, or an
/// evenly spaced subset of `limit`.
fn probe_indices(numel: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(l) if l < numel => (0..l).map(|i| i * numel / l).collect(),
        _ => (0..numel).collect(),
    }
}

/// Compares tape gradients of `loss_fn` with central differences for every
/// named input. `loss_fn` must build a scalar from the supplied leaves.
pub fn check<F>(
    inputs: &[(String, Tensor<f64>)],
    loss_fn: F,
    eps: f64,
    limit: Option<usize>,
) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, v)| tape.param(v.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (k, (name, value)) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(value.shape());
        let analytic = tape.grad(vars[k]).unwrap_or(&zeros).clone();
        let mut max_rel_err: f64 = 0.0;
        let idx = probe_indices(value.numel(), limit);
        for &i in &idx {
            let orig = values[k].data()[i];
            let numeric = ridders(
                |offset| {
                    values[k].data_mut()[i] = orig + offset;
                    eval(&values)
                },
                eps,
            )?;
            values[k].data_mut()[i] = orig;
            max_rel_err = max_rel_err.max(rel_err(analytic.data()[i], numeric));
        }
        reports.push(GradCheckReport { name: name.clone(), checked: idx.len(), max_rel_err });
    }
    Ok(reports)
}

/// Ridders' polynomial extrapolation of central differences `(f(h) −
/// f(−h)) / 2h` over a geometrically shrinking step, starting at `h0`.
/// Returns the estimate with the smallest internal error bound.
pub fn ridders(mut f: impl FnMut(f64) -> Result<f64>, h0: f64) -> Result<f64> {
    const SHRINK: f64 = 1.4;
    const TABLE: usize = 10;
    const SAFE: f64 = 2.0;
    let shrink2 = SHRINK * SHRINK;
    let mut central = |h: f64| -> Result<f64> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let mut h = h0;
    let mut prev = vec![central(h)?];
    let mut best = prev[0];
    let mut err = f64::INFINITY;
    for _ in 1..TABLE {
        h /= SHRINK;
        let mut row = vec![central(h)?];
        let mut fac = shrink2;
        for j in 1..=prev.len() {
            let next = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (next - row[j - 1]).abs().max((next - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = next;
            }
            row.push(next);
        }
        let last = row.len() - 1;
        if (row[last] - prev[last - 1]).abs() >= SAFE * err {
            break;
        }
        prev = row;
    }
    Ok(best)
}

/// Largest relative error over a set of reports.
pub fn worst(reports: &[GradCheckReport]) -> f64 {
    reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
}
