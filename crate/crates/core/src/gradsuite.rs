//! Finite-difference gradient suites, one per differentiable component.
//!
//! Every suite builds a small random instance in 64-bit precision, contracts
//! its output with a fixed random tensor to obtain a scalar, and compares the
//! tape gradient of every input and parameter with central differences.

use crate::attention::{self, SmsaOptions, SmsaParams};
use crate::cassi;
use crate::error::{MstError, Result};
use crate::mask::{self, Gate, MmParams};
use crate::model::{self, MstConfig, MstModel};
use crate::params::{Binding, ParamStore};
use crate::rng::{self, Rng64};
use crate::tensor::gradcheck::{self, GradCheckReport, FD_EPS};
use crate::tensor::{Tape, Tensor, Var};
use crate::train;

/// Suite names accepted by [`run`].
pub const MODULES: [&str; 7] = ["ops", "attention", "mask", "ffn", "block", "loss", "model"];

/// Entries probed per tensor in the parameter-heavy suites.
const PROBES: usize = 6;

pub fn run(module: &str, seed: u64) -> Result<Vec<GradCheckReport>> {
    match module {
        "ops" => ops(seed),
        "attention" => smsa(seed),
        "mask" => mask_branch(seed),
        "ffn" => ffn(seed),
        "block" => block(seed),
        "loss" => loss(seed),
        "model" => full_model(seed),
        other => {
            Err(MstError::Config(format!("unknown gradcheck module {other:?}; expected one of {}", MODULES.join(", "))))
        }
    }
}

pub fn run_all(seed: u64) -> Result<Vec<(String, Vec<GradCheckReport>)>> {
    MODULES.iter().map(|m| Ok((m.to_string(), run(m, seed)?))).collect()
}

fn uniform(r: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    rng::uniform(r, shape, lo, hi)
}

/// `Σ out ⊙ R` for a fixed `R`.
fn contract(tape: &mut Tape<f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(out, rv)?;
    Ok(tape.sum(p))
}

/// Checks a single op `f` over the named inputs.
fn op_check(
    name: &str,
    inputs: Vec<(&str, Tensor<f64>)>,
    r: &mut Rng64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<Vec<GradCheckReport>> {
    let inputs: Vec<(String, Tensor<f64>)> = inputs.into_iter().map(|(n, t)| (format!("{name}.{n}"), t)).collect();
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| probe.constant(t.clone())).collect();
    let out = f(&mut probe, &vars)?;
    let weights = uniform(r, probe.shape(out), -1.0, 1.0);
    gradcheck::check(
        &inputs,
        |tape, v| {
            let out = f(tape, v)?;
            contract(tape, out, &weights)
        },
        FD_EPS,
        None,
    )
}

fn ops(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::seeded(seed);
    let mut out = Vec::new();
    let x = uniform(&mut r, &[3, 6, 4], -1.0, 1.0);
    out.extend(op_check(
        "matmul",
        vec![("a", uniform(&mut r, &[4, 3], -1.0, 1.0)), ("b", uniform(&mut r, &[3, 5], -1.0, 1.0))],
        &mut r,
        |t, v| t.matmul(v[0], v[1]),
    )?);
    for (stride, pad, groups, k) in [(1, 1, 1, 3), (2, 1, 1, 4), (1, 2, 3, 5), (1, 0, 1, 1)] {
        let w = uniform(&mut r, &[6, 3 / groups, k, k], -0.5, 0.5);
        out.extend(op_check(
            &format!("conv{k}x{k}s{stride}g{groups}"),
            vec![("x", x.clone()), ("w", w)],
            &mut r,
            move |t, v| t.conv2d(v[0], v[1], stride, pad, groups),
        )?);
    }
    out.extend(op_check(
        "deconv2x2",
        vec![("x", x.clone()), ("w", uniform(&mut r, &[3, 2, 2, 2], -0.5, 0.5))],
        &mut r,
        |t, v| t.conv2d_transpose(v[0], v[1], 2, 2),
    )?);
    out.extend(op_check("bias", vec![("x", x.clone()), ("b", uniform(&mut r, &[3], -1.0, 1.0))], &mut r, |t, v| {
        t.add_channel_bias(v[0], v[1])
    })?);
    for axis in [0, 1] {
        out.extend(op_check(
            &format!("softmax{axis}"),
            vec![("x", uniform(&mut r, &[4, 5], -2.0, 2.0))],
            &mut r,
            move |t, v| t.softmax(v[0], axis),
        )?);
    }
    out.extend(op_check(
        "layer_norm",
        vec![("x", x.clone()), ("gamma", uniform(&mut r, &[3], 0.5, 1.5)), ("beta", uniform(&mut r, &[3], -0.5, 0.5))],
        &mut r,
        |t, v| t.layer_norm(v[0], 0, v[1], v[2]),
    )?);
    out.extend(op_check("gelu", vec![("x", x.clone())], &mut r, |t, v| Ok(t.gelu(v[0])))?);
    out.extend(op_check("sigmoid", vec![("x", x.clone())], &mut r, |t, v| Ok(t.sigmoid(v[0])))?);
    out.extend(op_check("sqrt", vec![("x", uniform(&mut r, &[6], 0.5, 2.0))], &mut r, |t, v| Ok(t.sqrt(v[0])))?);
    out.extend(op_check("mean", vec![("x", x.clone())], &mut r, |t, v| Ok(t.mean(v[0])))?);
    out.extend(op_check(
        "mul_scalar",
        vec![("x", x.clone()), ("s", uniform(&mut r, &[1], 0.5, 1.5))],
        &mut r,
        |t, v| t.mul_scalar(v[0], v[1]),
    )?);
    out.extend(op_check(
        "elementwise",
        vec![("a", x.clone()), ("b", uniform(&mut r, &[3, 6, 4], -1.0, 1.0))],
        &mut r,
        |t, v| {
            let p = t.mul(v[0], v[1])?;
            let s = t.sub(p, v[1])?;
            let a = t.add(s, v[0])?;
            let a = t.scale(a, 0.7);
            Ok(t.add_const(a, 0.3))
        },
    )?);
    out.extend(op_check(
        "layout",
        vec![("x", x.clone()), ("y", uniform(&mut r, &[2, 6, 4], -1.0, 1.0))],
        &mut r,
        |t, v| {
            let c = t.concat(&[v[0], v[1]], 0)?;
            let n = t.narrow(c, 0, 1, 3)?;
            let p = t.permute(n, &[2, 0, 1])?;
            t.reshape(p, &[4, 18])
        },
    )?);
    out.extend(op_check("shift_window", vec![("x", uniform(&mut r, &[6, 3, 9], -1.0, 1.0))], &mut r, |t, v| {
        t.shift_window(v[0], 2, 3, 5)
    })?);
    Ok(out)
}

/// Checks every parameter of `store` plus the extra named inputs; the
/// first `store.len()` vars handed to `f` form the binding.
fn store_check(
    store: &ParamStore<f64>,
    extra: Vec<(String, Tensor<f64>)>,
    r: &mut Rng64,
    limit: Option<usize>,
    f: impl Fn(&mut Tape<f64>, &Binding, &[Var]) -> Result<Var>,
) -> Result<Vec<GradCheckReport>> {
    let n = store.len();
    let mut inputs: Vec<(String, Tensor<f64>)> = store.iter().map(|(k, t)| (k.to_string(), t.clone())).collect();
    inputs.extend(extra);
    let call = |tape: &mut Tape<f64>, v: &[Var]| {
        let b = Binding::from_vars(v[..n].to_vec());
        f(tape, &b, &v[n..])
    };
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| probe.constant(t.clone())).collect();
    let out = call(&mut probe, &vars)?;
    let weights = uniform(r, probe.shape(out), -1.0, 1.0);
    gradcheck::check(
        &inputs,
        |tape, v| {
            let out = call(tape, v)?;
            contract(tape, out, &weights)
        },
        FD_EPS,
        limit,
    )
}

fn smsa(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::seeded(seed);
    let mut store = ParamStore::new();
    let p = SmsaParams::new(&mut store, "attn", 4, 2, &mut r)?;
    let x = uniform(&mut r, &[4, 3, 4], -1.0, 1.0);
    let m = uniform(&mut r, &[12, 4], 0.0, 2.0);
    let mut out =
        store_check(&store, vec![("attn.x".into(), x.clone()), ("attn.guide".into(), m)], &mut r, None, |t, b, v| {
            attention::smsa_forward(t, v[0], &p, b, Some(v[1]), SmsaOptions::default())
        })?;
    out.extend(store_check(&store, vec![("attn.unguided.x".into(), x)], &mut r, None, |t, b, v| {
        attention::smsa_forward(t, v[0], &p, b, None, SmsaOptions::default())
    })?);
    Ok(out)
}

fn mask_branch(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::seeded(seed);
    let mut store = ParamStore::new();
    let p = MmParams::new(&mut store, "mask", 2, 3, 2, &mut r)?;
    let ms = uniform(&mut r, &[3, 8, 12], 0.0, 1.0);
    store_check(&store, vec![("mask.shifted".into(), ms)], &mut r, None, |t, b, v| {
        mask::mask_attention(t, v[0], &p, b, 2, Gate::Learned)
    })
}

fn ffn(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::seeded(seed);
    let mut store = ParamStore::new();
    let p = model::FfnParams::new(&mut store, "ffn", 3, 2, &mut r);
    let x = uniform(&mut r, &[3, 4, 4], -1.0, 1.0);
    store_check(&store, vec![("ffn.x".into(), x)], &mut r, None, |t, b, v| model::ffn(t, v[0], &p, b))
}

fn block(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::seeded(seed);
    let cfg = MstConfig { channels: 4, n_lambda: 2, head_dim: 2, depths: [1, 1, 1], ffn_ratio: 2, ..MstConfig::toy() };
    let mut store = ParamStore::new();
    let blk = model::MsabBlock::new(&mut store, "block", 4, 2, &cfg, &mut r)?;
    // Non-trivial layer-norm affine parameters.
    for (name, t) in store.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>() {
        if name.ends_with("gamma") || name.ends_with("beta") {
            *store.by_name_mut(&name).expect("present") = uniform(&mut r, &t, 0.5, 1.5);
        }
    }
    let x = uniform(&mut r, &[4, 4, 4], -1.0, 1.0);
    let m = uniform(&mut r, &[16, 4], 0.0, 2.0);
    store_check(&store, vec![("block.x".into(), x), ("block.guide".into(), m)], &mut r, None, |t, b, v| {
        blk.forward(t, v[0], b, Some(v[1]))
    })
}

fn loss(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::seeded(seed);
    let pred = uniform(&mut r, &[4, 3, 3], 0.0, 1.0);
    let gt = uniform(&mut r, &[4, 3, 3], 0.0, 1.0);
    gradcheck::check(
        &[("loss.pred".into(), pred), ("loss.gt".into(), gt)],
        |t, v| Ok(train::loss_tape(t, v[0], v[1], 0.5)?.0),
        FD_EPS,
        None,
    )
}

/// Toy network small enough to probe every tensor; tensors are sampled.
fn full_model(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut r = rng::seeded(seed);
    let cfg = MstConfig {
        channels: 4,
        n_lambda: 3,
        head_dim: 2,
        depths: [1, 1, 1],
        ffn_ratio: 2,
        step: 1,
        ..MstConfig::toy()
    };
    let model = MstModel::<f64>::new(cfg.clone(), seed)?;
    let scene = cassi::generate_scene(seed, 8, 8, 3)?.cast::<f64>();
    let mask = cassi::generate_mask(seed ^ 0x5eed, 8, 8, 0.5)?.cast::<f64>();
    let y = cassi::measure(&cassi::disperse(&cassi::modulate(&scene, &mask)?, 1), cassi::Noise::None, &mut r);
    let h = cassi::init_input(&y, 1, 3)?;
    let ms = cassi::shift_mask(&mask, 1, 3)?.to_chw();
    let gt = scene.to_chw();
    let extra = vec![("input".to_string(), h.to_chw())];
    let mut reports = store_check(model.params(), extra, &mut r, Some(PROBES), |t, b, v| {
        let msv = t.constant(ms.clone());
        model.forward_tape(t, b, v[0], msv, None)
    })?;
    // The training objective end to end.
    let gv = gt.clone();
    let msl = ms.clone();
    let n = model.params().len();
    let mut inputs: Vec<(String, Tensor<f64>)> =
        model.params().iter().map(|(k, t)| (format!("loss/{k}"), t.clone())).collect();
    inputs.push(("loss/input".into(), h.to_chw()));
    reports.extend(gradcheck::check(
        &inputs,
        |t, v| {
            let b = Binding::from_vars(v[..n].to_vec());
            let msv = t.constant(msl.clone());
            let out = model.forward_tape(t, &b, v[n], msv, None)?;
            let g = t.constant(gv.clone());
            Ok(train::loss_tape(t, out, g, 1.0)?.0)
        },
        FD_EPS,
        Some(2),
    )?);
    Ok(reports)
}

/// Group label of a report name, for summaries.
pub fn group_of(module: &str, name: &str) -> String {
    if module == "model" {
        let bare = name.strip_prefix("loss/").unwrap_or(name);
        if bare == "input" {
            return "input".into();
        }
        return MstModel::<f64>::group_of(bare).to_string();
    }
    name.split('.').next().unwrap_or(name).to_string()
}

/// Largest error per group, in first-seen order.
pub fn summarize(module: &str, reports: &[GradCheckReport]) -> Vec<(String, usize, f64)> {
    let mut out: Vec<(String, usize, f64)> = Vec::new();
    for rep in reports {
        let g = group_of(module, &rep.name);
        match out.iter_mut().find(|(k, _, _)| *k == g) {
            Some(e) => {
                e.1 += rep.checked;
                e.2 = e.2.max(rep.max_rel_err);
            }
            None => out.push((g, rep.checked, rep.max_rel_err)),
        }
    }
    out
}
