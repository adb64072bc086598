//! Reconstruction loss: RMSE plus a spectrum-constancy term, the RMSE of the
//! first-order differences along the spectral axis.

use crate::cassi::HsiCube;
use crate::error::{dim_err, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const DEFAULT_LAMBDA_SCL: f64 = 1.0;

/// One evaluation of the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub rmse: f64,
    pub scl: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(rmse: f64, scl: f64, lambda_scl: f64) -> Self {
        Self { rmse, scl, total: rmse + lambda_scl * scl }
    }

    pub fn is_finite(&self) -> bool {
        self.rmse.is_finite() && self.scl.is_finite() && self.total.is_finite()
    }
}

pub fn rmse_tensors<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(gt)?;
    let sq: f64 = pred.data().iter().zip(gt.data()).map(|(p, g)| (p.as_f64() - g.as_f64()).powi(2)).sum();
    Ok((sq / pred.numel() as f64).sqrt())
}

/// Spectral first differences of an `H×W×N` cube, `H×W×(N−1)`.
fn spectral_diff(c: &HsiCube<impl Scalar>) -> Vec<f64> {
    let n = c.bands();
    c.data().data().chunks(n).flat_map(|px| px.windows(2).map(|w| w[1].as_f64() - w[0].as_f64())).collect()
}

pub fn loss<T: Scalar>(pred: &HsiCube<T>, gt: &HsiCube<T>, lambda_scl: f64) -> Result<LossReport> {
    if pred.data().shape() != gt.data().shape() {
        return Err(dim_err!("prediction {:?} vs ground truth {:?}", pred.data().shape(), gt.data().shape()));
    }
    let rmse = rmse_tensors(pred.data(), gt.data())?;
    let (dp, dg) = (spectral_diff(pred), spectral_diff(gt));
    let scl = if dp.is_empty() {
        0.0
    } else {
        (dp.iter().zip(&dg).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / dp.len() as f64).sqrt()
    };
    Ok(LossReport::new(rmse, scl, lambda_scl))
}

/// Differentiable loss on channel-first `N×H×W` values.
/// Returns `(total, rmse, scl)`.
pub fn loss_tape<T: Scalar>(tape: &mut Tape<T>, pred: Var, gt: Var, lambda_scl: f64) -> Result<(Var, Var, Var)> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(dim_err!("prediction {:?} vs ground truth {:?}", tape.shape(pred), tape.shape(gt)));
    }
    let rmse = rms(tape, pred, gt)?;
    let n = tape.shape(pred)[0];
    let scl = if n < 2 {
        tape.constant(Tensor::scalar(T::zero()))
    } else {
        let diff = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
            let hi = tape.narrow(x, 0, 1, n - 1)?;
            let lo = tape.narrow(x, 0, 0, n - 1)?;
            tape.sub(hi, lo)
        };
        let dp = diff(tape, pred)?;
        let dg = diff(tape, gt)?;
        rms(tape, dp, dg)?
    };
    let weighted = tape.scale(scl, T::lit(lambda_scl));
    let total = tape.add(rmse, weighted)?;
    Ok((total, rmse, scl))
}

fn rms<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let e = tape.sub(a, b)?;
    let sq = tape.mul(e, e)?;
    let m = tape.mean(sq);
    Ok(tape.sqrt(m))
}
