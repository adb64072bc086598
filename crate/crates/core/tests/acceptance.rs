//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so
//! the report is printed even when output capture is on.

mod common;

use std::time::Instant;

use mst_core::attention::{self, SmsaOptions, SmsaParams};
use mst_core::cassi::{self, HsiCube, Mask2D, Noise};
use mst_core::mask::{self, Gate, MmParams};
use mst_core::model::audit::{self, FlopConvention};
use mst_core::model::{MstConfig, MstModel};
use mst_core::params::ParamStore;
use mst_core::train::{self, metrics, TrainConfig};
use mst_core::{gradsuite, rng, Tape, Tensor};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(id: u32, name: &str, gating: bool, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let scope = if gating { "" } else { " [non-gating]" };
    println!("{tag} {id} {name}{scope}: {} ({:.1}s)", o.detail, t.elapsed().as_secs_f64());
    o.pass || !gating
}

fn efficiency_table() -> Outcome {
    let rows = [("mst-s", 0.93e6, 12.96e9), ("mst-m", 1.50e6, 18.07e9), ("mst-l", 2.03e6, 28.15e9)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p_ref, f_ref) in rows {
        let cfg = MstConfig::preset(name).unwrap();
        let p = audit::count_params(&cfg).unwrap() as f64;
        let f = audit::count_flops(&cfg, 256, 256, FlopConvention::MacAsFlop).unwrap() as f64;
        let (dp, df) = (p / p_ref - 1.0, f / f_ref - 1.0);
        pass &= dp.abs() <= 0.1 && df.abs() <= 0.1;
        parts.push(format!("{name} {:.3}M ({:+.1}%) {:.2}G ({:+.1}%)", p / 1e6, 100.0 * dp, f / 1e9, 100.0 * df));
    }
    outcome(pass, format!("{}; ffn ratio 5, one FLOP per MAC", parts.join(", ")))
}

fn complexity_formula() -> Outcome {
    let mut r = rng::seeded(11);
    let mut checked = 0;
    let mut pass = true;
    for (h, w) in [(1, 1), (2, 3), (8, 8), (5, 12)] {
        for (c, n) in [(4, 1), (6, 2), (12, 4), (28, 1), (56, 2)] {
            let q: Tensor<f64> = rng::uniform(&mut r, &[h * w, c], -1.0, 1.0);
            let k = rng::uniform(&mut r, &[h * w, c], -1.0, 1.0);
            let v = rng::uniform(&mut r, &[h * w, c], -1.0, 1.0);
            let mut macs = 0u64;
            attention::attend_counted(&q, &k, &v, &vec![1.0; n], &mut macs).unwrap();
            pass &= macs == (2 * h * w * c * c / n) as u64;
            checked += 1;
        }
    }
    outcome(pass, format!("{checked} (H,W,C,N) combinations, counted MACs = 2HWC^2/N"))
}

/// Cube with values on a 1/256 grid so every sum of up to 2^40 terms is exact.
fn dyadic_cube(r: &mut rng::Rng64, h: usize, w: usize, n: usize) -> HsiCube<f64> {
    HsiCube::from_tensor(Tensor::from_fn(&[h, w, n], |_| r.random_range(0..=256) as f64 / 256.0)).unwrap()
}

fn physics() -> Outcome {
    let mut r = rng::seeded(12);
    let configs = 64;
    let mut failures = Vec::new();
    for i in 0..configs {
        let (h, w, n, d) = (r.random_range(1..9), r.random_range(1..13), r.random_range(1..10), r.random_range(0..4));
        let f = dyadic_cube(&mut r, h, w, n);
        let m = cassi::generate_mask(i, h, w, 0.5).unwrap().cast::<f64>();
        let fp = cassi::modulate(&f, &m).unwrap();
        let sheared = cassi::disperse(&fp, d);
        if cassi::shift_back(&sheared).unwrap() != fp {
            failures.push(format!("round trip {h}x{w}x{n} d={d}"));
        }
        let y = cassi::measure(&sheared, Noise::None, &mut rng::seeded(0));
        if y.width() != w + d * (n - 1) || y.height() != h {
            failures.push(format!("width {h}x{w}x{n} d={d}"));
        }
        if y.data().data().iter().sum::<f64>() != fp.data().data().iter().sum::<f64>() {
            failures.push(format!("energy {h}x{w}x{n} d={d}"));
        }
        let back = cassi::shift_back(&cassi::shift_mask(&m, d, n).unwrap()).unwrap();
        if (0..n).any(|c| (0..h).any(|yy| (0..w).any(|x| back.get(yy, x, c) != m.data().get(&[yy, x])))) {
            failures.push(format!("mask shift {h}x{w}x{n} d={d}"));
        }
    }
    let f = cassi::generate_scene(0, 256, 256, 28).unwrap();
    let m = cassi::generate_mask(1, 256, 256, 0.5).unwrap();
    let y = cassi::measure(&cassi::disperse(&cassi::modulate(&f, &m).unwrap(), 2), Noise::None, &mut rng::seeded(0));
    if y.width() != 310 {
        failures.push(format!("256 -> {}", y.width()));
    }
    let detail = if failures.is_empty() {
        format!("{configs} random configurations exact; 256x256x28 at d=2 gives {}x{}", y.height(), y.width())
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn gradient_suite() -> Outcome {
    let seeds = 20;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut probes = 0;
    for seed in 0..seeds {
        for (module, reports) in gradsuite::run_all(seed).unwrap() {
            for r in reports {
                probes += r.checked;
                if r.max_rel_err > worst {
                    worst = r.max_rel_err;
                    worst_at = format!("{module}/{} seed {seed}", r.name);
                }
            }
        }
    }
    outcome(
        worst < 1e-4,
        format!(
            "{} suites x {seeds} seeds, {probes} probes, max rel err {worst:.2e} at {worst_at}",
            gradsuite::MODULES.len()
        ),
    )
}

fn mechanisms() -> Outcome {
    let mut notes = Vec::new();

    let (c, heads) = (8, 2);
    let mut store = ParamStore::<f64>::new();
    let p = SmsaParams::new(&mut store, "attn", c, heads, &mut rng::seeded(1)).unwrap();
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, false);
    let x = tape.constant(rng::uniform(&mut rng::seeded(2), &[c, 6, 5], -1.0, 1.0));
    let ones = tape.constant(Tensor::ones(&[30, c]));
    let g = attention::smsa_forward(&mut tape, x, &p, &b, Some(ones), SmsaOptions::default()).unwrap();
    let u = attention::smsa_forward(&mut tape, x, &p, &b, None, SmsaOptions::default()).unwrap();
    let a = tape.value(g) == tape.value(u);
    notes.push(format!("(a) {}", if a { "bitwise" } else { "differs" }));

    let (n, cm, d, h, w) = (4, 6, 2, 5, 7);
    let mut store = ParamStore::<f64>::new();
    let mp = MmParams::new(&mut store, "mm", 0, n, cm, &mut rng::seeded(3)).unwrap();
    let m = cassi::generate_mask(4, h, w, 0.5).unwrap().cast::<f64>();
    let shifted = cassi::shift_mask(&m, d, n).unwrap().to_chw();
    let mut tape = Tape::new();
    let bd = store.bind(&mut tape, false);
    let ms = tape.constant(shifted.clone());
    let got = mask::mask_attention(&mut tape, ms, &mp, &bd, d, Gate::Disabled).unwrap();
    let w1 = store.get(mp.w1);
    let wide = w + d * (n - 1);
    let want = Tensor::from_fn(&[cm, h, w], |i| {
        let k = i / (h * w);
        let (y, x) = ((i / w) % h, i % w + d * (k % n));
        (0..n).map(|j| w1.get(&[k, j, 0, 0]) * shifted.data()[(j * h + y) * wide + x]).sum()
    });
    let bdev = tape.value(got).data().iter().zip(want.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let bpass = bdev < 1e-14;
    notes.push(format!("(b) max dev {bdev:.1e}"));

    let f = cassi::generate_scene(5, 16, 16, 6).unwrap();
    let mk = cassi::generate_mask(6, 16, 16, 0.5).unwrap();
    let cpass = mask::legacy_mask_input(&f, &mk).unwrap() == cassi::modulate(&f, &mk).unwrap();
    notes.push(format!("(c) {}", if cpass { "bitwise" } else { "differs" }));

    let dpass = permutation_equivariance();
    notes.push(format!("(d) {}", if dpass { "exact" } else { "differs" }));

    outcome(a && bpass && cpass && dpass, notes.join(", "))
}

/// S-MSA without the position branch commutes with a pixel permutation.
/// Inputs and weights lie on a coarse dyadic grid, so reordering the
/// token sums cannot change any rounding.
fn permutation_equivariance() -> bool {
    let (c, heads, hh, ww) = (4, 2, 2, 4);
    let mut store = ParamStore::<f64>::new();
    let p = SmsaParams::new(&mut store, "attn", c, heads, &mut rng::seeded(1)).unwrap();
    let mut r = rng::seeded(21);
    let mut dyadic = |shape: &[usize]| Tensor::from_fn(shape, |_| r.random_range(-16..=16) as f64 / 4.0);
    for id in p.param_ids() {
        let s = store.get(id).shape().to_vec();
        *store.get_mut(id) = dyadic(&s);
    }
    let x = dyadic(&[c, hh, ww]);
    let perm = [3, 0, 7, 1, 6, 2, 5, 4];
    let scramble =
        |t: &Tensor<f64>| Tensor::from_fn(&[c, hh, ww], |i| t.data()[(i / (hh * ww)) * hh * ww + perm[i % (hh * ww)]]);
    let run = |input: Tensor<f64>| {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let xv = tape.constant(input);
        let y = attention::smsa_forward(&mut tape, xv, &p, &b, None, SmsaOptions { without_position: true }).unwrap();
        tape.value(y).clone()
    };
    run(scramble(&x)) == scramble(&run(x))
}

struct ToyRun {
    losses: Vec<f64>,
    init_psnr: f64,
    final_psnr: f64,
}

fn toy_run(cfg: MstConfig, scene: &HsiCube<f32>, mask: &Mask2D<f32>, steps: usize) -> ToyRun {
    let mut model = MstModel::<f32>::new(cfg.clone(), 0).unwrap();
    let tc = TrainConfig::toy(scene.height(), steps, 0);
    let hist = train::train(&mut model, std::slice::from_ref(scene), mask, &tc).unwrap();
    let y = cassi::measure(
        &cassi::disperse(&cassi::modulate(scene, mask).unwrap(), cfg.step),
        Noise::None,
        &mut rng::seeded(0),
    );
    let init = cassi::init_input(&y, cfg.step, cfg.n_lambda).unwrap();
    let rec = model.reconstruct_measurement(&y, mask).unwrap();
    ToyRun {
        losses: hist.iter().map(|r| r.loss.total).collect(),
        init_psnr: metrics::psnr(&init, scene, 1.0).unwrap(),
        final_psnr: metrics::psnr(&rec, scene, 1.0).unwrap(),
    }
}

fn toy_scene() -> (HsiCube<f32>, Mask2D<f32>) {
    (cassi::generate_scene(0, 32, 32, 8).unwrap(), cassi::generate_mask(1, 32, 32, 0.5).unwrap())
}

fn toy_overfit() -> Outcome {
    let (scene, mask) = toy_scene();
    let a = toy_run(MstConfig::toy(), &scene, &mask, 500);
    let b = toy_run(MstConfig::toy(), &scene, &mask, 500);
    let gain = a.final_psnr - a.init_psnr;
    let repeat = a.losses == b.losses && a.final_psnr == b.final_psnr;
    outcome(
        gain >= 10.0 && repeat,
        format!(
            "32x32x8, seed 0, 500 steps: psnr {:.2} -> {:.2} dB ({gain:+.2}), loss {:.4} -> {:.4}, repeat {}",
            a.init_psnr,
            a.final_psnr,
            a.losses[0],
            a.losses[a.losses.len() - 1],
            if repeat { "identical" } else { "differs" }
        ),
    )
}

fn ablation_and_scope() -> Outcome {
    let (scene, mask) = toy_scene();
    let steps = 150;
    let tail = |r: &ToyRun| r.losses[steps - 10..].iter().sum::<f64>() / 10.0;
    let smsa = toy_run(MstConfig { use_mm: false, ..MstConfig::toy() }, &scene, &mask, steps);
    let base = toy_run(MstConfig { use_mm: false, use_smsa: false, ..MstConfig::toy() }, &scene, &mask, steps);
    let (ls, lb) = (tail(&smsa), tail(&base));
    outcome(
        true,
        format!(
            "s-msa final loss {ls:.4} vs baseline {lb:.4} after {steps} steps ({}); \
             the published benchmark PSNR/SSIM (35.18 dB average for MST-L) needs the CAVE/KAIST data \
             and a full GPU run and is not reproduced here",
            if ls <= lb { "ordering holds" } else { "ordering does not hold" }
        ),
    )
}

fn metric_sanity() -> Outcome {
    let (_, g) = common::pair(0, 16, 16, 4);
    let ssim_self = metrics::ssim(&g, &g, 1.0).unwrap();
    let shifted = HsiCube::from_tensor(g.data().map(|v| v + 1.0)).unwrap();
    let psnr_offset = metrics::psnr(&shifted, &g, 1.0).unwrap();
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let (h, w, n) = (12 + (seed as usize % 9), 11 + (seed as usize % 7), 1 + seed as usize % 4);
        let (p, g) = common::pair(100 + seed, h, w, n);
        dp = dp.max((metrics::psnr(&p, &g, 1.0).unwrap() - common::psnr_oracle(&p, &g)).abs());
        ds = ds.max((metrics::ssim(&p, &g, 1.0).unwrap() - common::ssim_oracle(&p, &g)).abs());
    }
    outcome(
        ssim_self == 1.0 && psnr_offset.abs() < 1e-9 && dp < 0.01 && ds < 1e-4,
        format!("ssim(x,x) = {ssim_self}, psnr at unit offset = {psnr_offset:.3} dB, 20 pairs vs oracle: {dp:.1e} dB / {ds:.1e}"),
    )
}

fn main() {
    // `cargo test -- --list` and filters should not trigger the long run.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut ok = true;
    ok &= report(1, "efficiency table", true, efficiency_table);
    ok &= report(2, "attention complexity", true, complexity_formula);
    ok &= report(3, "physics round trips", true, physics);
    ok &= report(4, "gradient suite", true, gradient_suite);
    ok &= report(5, "mechanism equivalences", true, mechanisms);
    ok &= report(6, "toy overfit", true, toy_overfit);
    ok &= report(7, "scope and ablation ordering", false, ablation_and_scope);
    ok &= report(8, "metric sanity", true, metric_sanity);
    if !ok {
        std::process::exit(1);
    }
}
