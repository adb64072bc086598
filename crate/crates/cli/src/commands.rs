use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mst_core::cassi::{self, HsiCube, Mask2D, Measurement, Noise};
use mst_core::model::audit::{self, FlopConvention};
use mst_core::model::{MstConfig, MstModel};
use mst_core::tensor::gradcheck;
use mst_core::{gradsuite, hsit, rng, train};

use crate::{
    CountArgs, EvalArgs, Failure, GradcheckArgs, MaskSource, PlotArgs, ReconstructArgs, SceneSource, SimulateArgs,
    TrainArgs,
};

type Outcome = Result<(), Failure>;

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn load_cube(path: &Path) -> Result<HsiCube, Failure> {
    Ok(HsiCube::from_tensor(hsit::load(path)?)?)
}

fn load_mask(path: &Path) -> Result<Mask2D, Failure> {
    Ok(Mask2D::new(hsit::load(path)?)?)
}

fn scene_from(src: &SceneSource) -> Result<HsiCube, Failure> {
    match (&src.scene, src.synthetic) {
        (Some(p), _) => load_cube(p),
        (None, Some(seed)) => Ok(cassi::generate_scene(seed, src.height, src.width, src.bands)?),
        (None, None) => Err(usage("one of --scene or --synthetic is required")),
    }
}

fn mask_from(src: &MaskSource, h: usize, w: usize) -> Result<Mask2D, Failure> {
    match (&src.mask, src.random_mask) {
        (Some(p), _) => load_mask(p),
        (None, Some(seed)) => Ok(cassi::generate_mask(seed, h, w, src.density)?),
        (None, None) => Err(usage("one of --mask or --random-mask is required")),
    }
}

/// A preset name, or a path to a `key = value` file.
fn config_from(spec: &str) -> Result<MstConfig, Failure> {
    if Path::new(spec).is_file() {
        Ok(MstConfig::from_kv(&fs::read_to_string(spec)?)?)
    } else {
        Ok(MstConfig::preset(spec)?)
    }
}

pub fn simulate(a: SimulateArgs) -> Outcome {
    let scene = scene_from(&a.scene)?;
    let mask = mask_from(&a.mask, scene.height(), scene.width())?;
    let sheared = cassi::disperse(&cassi::modulate(&scene, &mask)?, a.d);
    let y = cassi::measure(&sheared, a.noise, &mut rng::seeded(a.noise_seed));
    let shifted = cassi::shift_mask(&mask, a.d, scene.bands())?;
    fs::create_dir_all(&a.out)?;
    hsit::save(a.out.join("measurement.hsit"), y.data())?;
    hsit::save(a.out.join("mask.hsit"), mask.data())?;
    hsit::save(a.out.join("shifted_mask.hsit"), shifted.data())?;
    hsit::save(a.out.join("gt.hsit"), scene.data())?;
    println!(
        "measurement {}x{} from {}x{}x{} (d={}, noise={})",
        y.height(),
        y.width(),
        scene.height(),
        scene.width(),
        scene.bands(),
        a.d,
        a.noise
    );
    Ok(())
}

fn snapshot_path(out: &Path, step: usize) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".step{step}"));
    out.with_file_name(name)
}

pub fn train(a: TrainArgs) -> Outcome {
    let scene = scene_from(&a.scene)?;
    let mask = mask_from(&a.mask, scene.height(), scene.width())?;
    let mut model = match &a.init {
        Some(p) => MstModel::<f32>::load(p)?,
        None => MstModel::<f32>::new(config_from(&a.config)?, a.init_seed)?,
    };
    let tc = train::TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        steps_per_epoch: a.steps_per_epoch,
        batch: a.batch,
        patch: a.patch.unwrap_or(scene.height().min(scene.width())),
        seed: a.seed,
        augment: !a.no_augment,
        noise: a.noise,
        lambda_scl: a.lambda_scl,
        ..train::TrainConfig::default()
    };
    let mut log = match &a.log {
        Some(p) => {
            let mut w = BufWriter::new(fs::File::create(p)?);
            writeln!(w, "{}", train::CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let total = tc.total_steps();
    let history = train::train_with(&mut model, &[scene], &mask, &tc, |rec, m| {
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", rec.csv_row())?;
        }
        if let Some(every) = a.snapshot_every.filter(|&e| e > 0) {
            if (rec.step + 1) % every == 0 && rec.step + 1 < total {
                m.save(snapshot_path(&a.out, rec.step + 1))?;
            }
        }
        Ok(())
    })?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    model.save(&a.out)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("steps {} loss {:.6} -> {:.6}", history.len(), first.loss.total, last.loss.total);
    }
    Ok(())
}

pub fn reconstruct(a: ReconstructArgs) -> Outcome {
    let model = MstModel::<f32>::load(&a.weights)?;
    let y = Measurement::new(hsit::load(&a.measurement)?, Noise::None)?;
    let mask = load_mask(&a.mask)?;
    let out = model.reconstruct_measurement(&y, &mask)?;
    hsit::save(&a.out, out.data())?;
    println!("wrote {}x{}x{}", out.height(), out.width(), out.bands());
    Ok(())
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.6}")
    }
}

pub fn eval(a: EvalArgs) -> Outcome {
    let pred = load_cube(&a.pred)?;
    let gt = load_cube(&a.gt)?;
    let p = train::psnr_per_channel(&pred, &gt, a.peak)?;
    let s = train::ssim_per_channel(&pred, &gt, a.peak)?;
    println!("channel,psnr,ssim");
    for (i, (pv, sv)) in p.iter().zip(&s).enumerate() {
        println!("{i},{},{}", fmt_metric(*pv), fmt_metric(*sv));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean,{},{}", fmt_metric(mean(&p)), fmt_metric(mean(&s)));
    Ok(())
}

/// Relative deviation, or `None` when within tolerance.
fn gate(label: &str, got: f64, want: f64, tol: f64) -> Option<String> {
    let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
    (rel > tol).then(|| {
        format!("{label}: got {got:.6e}, expected {want:.6e}, deviation {:.2}% > {:.2}%", rel * 100.0, tol * 100.0)
    })
}

pub fn count(a: CountArgs) -> Outcome {
    let cfg = config_from(&a.config)?;
    let convention = if a.two_per_mac { FlopConvention::TwoPerMac } else { FlopConvention::MacAsFlop };
    let params = audit::count_params(&cfg)?;
    let flops = audit::count_flops(&cfg, a.height, a.width, convention)?;
    println!("config {}", a.config);
    println!("params {params}");
    println!("flops {flops}");
    println!("params_m {:.4}", params as f64 / 1e6);
    println!("flops_g {:.4}", flops as f64 / 1e9);
    if a.breakdown {
        println!("params by component:\n{}", audit::param_breakdown(&cfg)?);
        println!("MACs by component:\n{}", audit::mac_breakdown(&cfg, a.height, a.width)?);
    }
    if let Some(spec) = &a.expect {
        let parts: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(format!("--expect wants PARAMS,FLOPS,TOL, got {spec:?}")))?;
        let [p, f, tol] = parts[..] else {
            return Err(usage(format!("--expect wants three values, got {}", parts.len())));
        };
        let fails: Vec<String> = [gate("params", params as f64, p, tol), gate("flops", flops as f64, f, tol)]
            .into_iter()
            .flatten()
            .collect();
        if !fails.is_empty() {
            return Err(Failure::Gate(format!("gate failed\n{}", fails.join("\n"))));
        }
        println!("gate pass (tol {tol})");
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let modules: Vec<&str> = if a.module == "all" {
        gradsuite::MODULES.to_vec()
    } else if gradsuite::MODULES.contains(&a.module.as_str()) {
        vec![a.module.as_str()]
    } else {
        return Err(usage(format!(
            "unknown module {:?}; expected all or one of {}",
            a.module,
            gradsuite::MODULES.join(", ")
        )));
    };
    println!("module,group,checked,max_rel_err");
    let mut worst: f64 = 0.0;
    for m in modules {
        let mut reports = Vec::new();
        for seed in a.seed..a.seed + a.seeds.max(1) {
            reports.extend(gradsuite::run(m, seed)?);
        }
        for (group, checked, err) in gradsuite::summarize(m, &reports) {
            println!("{m},{group},{checked},{err:.3e}");
        }
        worst = worst.max(gradcheck::worst(&reports));
    }
    println!("max_rel_err {worst:.3e}");
    if worst >= a.tol {
        return Err(Failure::Gate(format!("gradient check failed: {worst:.3e} >= {:.1e}", a.tol)));
    }
    Ok(())
}

/// Binary graymap of one channel, `[0, 1]` mapped linearly onto `[0, 255]`.
pub fn pgm(cube: &HsiCube, channel: usize) -> Vec<u8> {
    let (h, w) = (cube.height(), cube.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let v = f64::from(cube.get(y, x, channel)).clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 && vb == 0.0 && a == b {
        1.0
    } else {
        cov / (va * vb).sqrt()
    }
}

pub fn plot(a: PlotArgs) -> Outcome {
    let cube = load_cube(&a.cube)?;
    if let Some(&bad) = a.channels.iter().find(|&&c| c >= cube.bands()) {
        return Err(usage(format!("channel {bad} out of range; cube has {} bands", cube.bands())));
    }
    fs::create_dir_all(&a.out_dir)?;
    for &c in &a.channels {
        fs::write(a.out_dir.join(format!("channel_{c:02}.pgm")), pgm(&cube, c))?;
    }
    let Some(at) = &a.spectral_at else {
        return Ok(());
    };
    let (x, y) = at
        .split_once(',')
        .and_then(|(x, y)| Some((x.trim().parse::<usize>().ok()?, y.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| usage(format!("--spectral-at wants X,Y, got {at:?}")))?;
    if x >= cube.width() || y >= cube.height() {
        return Err(usage(format!("pixel ({x},{y}) outside {}x{} cube", cube.width(), cube.height())));
    }
    let curve: Vec<f64> = (0..cube.bands()).map(|n| f64::from(cube.get(y, x, n))).collect();
    let reference = match &a.reference {
        Some(p) => {
            let r = load_cube(p)?;
            if r.data().shape() != cube.data().shape() {
                return Err(Failure::Data(format!(
                    "reference shape {:?} differs from cube {:?}",
                    r.data().shape(),
                    cube.data().shape()
                )));
            }
            Some((0..r.bands()).map(|n| f64::from(r.get(y, x, n))).collect::<Vec<f64>>())
        }
        None => None,
    };
    let mut csv = String::from(if reference.is_some() {
        "band,wavelength_nm,value,reference\n"
    } else {
        "band,wavelength_nm,value\n"
    });
    for (n, v) in curve.iter().enumerate() {
        let wl = cube.wavelengths()[n];
        match &reference {
            Some(r) => csv.push_str(&format!("{n},{wl:.6},{v:.6},{:.6}\n", r[n])),
            None => csv.push_str(&format!("{n},{wl:.6},{v:.6}\n")),
        }
    }
    fs::write(a.out_dir.join("spectrum.csv"), csv)?;
    if let Some(r) = reference {
        println!("pearson {:.6}", pearson(&curve, &r));
    }
    Ok(())
}
