use std::path::Path;
use std::process::{Command, Output};

use mst_core::cassi::{self, Measurement, Noise};
use mst_core::model::audit;
use mst_core::model::{MstConfig, MstModel};
use mst_core::{hsit, Tensor};

fn mst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mst")).args(args).output().expect("spawn mst")
}

fn ok(args: &[&str]) -> String {
    let o = mst(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    mst(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(out: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--synthetic", "3", "--random-mask", "4", "--out", p(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_writes_full_sized_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["simulate", "--synthetic", "1", "--random-mask", "2", "--out", p(dir.path())]);
    assert!(out.contains("256x310"), "{out}");
    let y: Tensor<f32> = hsit::load(dir.path().join("measurement.hsit")).unwrap();
    assert_eq!(y.shape(), &[256, 310]);
    let sm: Tensor<f32> = hsit::load(dir.path().join("shifted_mask.hsit")).unwrap();
    assert_eq!(sm.shape(), &[256, 310, 28]);
    for f in ["mask.hsit", "gt.hsit"] {
        assert!(dir.path().join(f).is_file());
    }
}

#[test]
fn simulate_without_dispersion_keeps_width() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--height", "16", "--width", "12", "--bands", "5", "--d", "0"]);
    let y: Tensor<f32> = hsit::load(dir.path().join("measurement.hsit")).unwrap();
    assert_eq!(y.shape(), &[16, 12]);
}

#[test]
fn simulate_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let extra = ["--height", "16", "--width", "16", "--bands", "6", "--noise", "shot:11", "--noise-seed", "8"];
    simulate(a.path(), &extra);
    simulate(b.path(), &extra);
    for f in ["measurement.hsit", "mask.hsit", "shifted_mask.hsit", "gt.hsit"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn count_gate_passes_and_fails() {
    assert_eq!(code(&["count", "--config", "mst-s", "--expect", "0.93e6,12.96e9,0.1"]), 0);
    assert_eq!(code(&["count", "--config", "mst-s", "--expect", "0.5e6,12.96e9,0.1"]), 3);
    assert_eq!(code(&["count", "--config", "mst-s", "--expect", "garbage"]), 1);
}

#[test]
fn count_agrees_with_enumeration() {
    let out = ok(&["count", "--config", "toy", "--height", "32", "--width", "32"]);
    let cfg = MstConfig::toy();
    let params = MstModel::<f32>::new(cfg.clone(), 0).unwrap().num_params();
    assert!(out.contains(&format!("params {params}\n")), "{out}");
    let macs = audit::count_macs(&cfg, 32, 32).unwrap();
    assert!(out.contains(&format!("flops {macs}\n")), "{out}");
    let doubled = ok(&["count", "--config", "toy", "--height", "32", "--width", "32", "--two-per-mac"]);
    assert!(doubled.contains(&format!("flops {}\n", 2 * macs)), "{doubled}");
}

#[test]
fn eval_of_identical_cubes() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--height", "16", "--width", "16", "--bands", "3"]);
    let gt = dir.path().join("gt.hsit");
    let out = ok(&["eval", "--pred", p(&gt), "--gt", p(&gt)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "channel,psnr,ssim");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[4], "mean,inf,1.000000");
}

#[test]
fn eval_rejects_shape_mismatch() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(a.path(), &["--height", "16", "--width", "16", "--bands", "3"]);
    simulate(b.path(), &["--height", "16", "--width", "16", "--bands", "4"]);
    assert_eq!(code(&["eval", "--pred", p(&a.path().join("gt.hsit")), "--gt", p(&b.path().join("gt.hsit"))]), 2);
}

#[test]
fn zero_head_reconstruction_is_the_shift_back_input() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--height", "16", "--width", "16", "--bands", "8"]);
    let mut model = MstModel::<f32>::new(MstConfig::toy(), 2).unwrap();
    let (w, b) = model.head_params();
    for id in [w, b] {
        let t = model.params_mut().get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    let weights = dir.path().join("w.hsib");
    model.save(&weights).unwrap();
    let out = dir.path().join("rec.hsit");
    let (ym, mm) = (dir.path().join("measurement.hsit"), dir.path().join("mask.hsit"));
    ok(&["reconstruct", "--weights", p(&weights), "--measurement", p(&ym), "--mask", p(&mm), "--out", p(&out)]);
    let rec: Tensor<f32> = hsit::load(&out).unwrap();
    let y = Measurement::new(hsit::load(&ym).unwrap(), Noise::None).unwrap();
    assert_eq!(rec, cassi::init_input(&y, 2, 8).unwrap().into_tensor());
}

#[test]
fn reconstruct_rejects_band_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--height", "16", "--width", "16", "--bands", "5"]);
    let weights = dir.path().join("w.hsib");
    MstModel::<f32>::new(MstConfig::toy(), 0).unwrap().save(&weights).unwrap();
    let (ym, mm, out) =
        (dir.path().join("measurement.hsit"), dir.path().join("mask.hsit"), dir.path().join("rec.hsit"));
    let args = ["reconstruct", "--weights", p(&weights), "--measurement", p(&ym), "--mask", p(&mm), "--out", p(&out)];
    assert_ne!(code(&args), 0);
}

#[test]
fn plot_maps_half_gray_and_self_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let cube_path = dir.path().join("half.hsit");
    let mut half = Tensor::<f32>::full(&[4, 5, 3], 0.5);
    half.set(&[0, 0, 2], 0.9);
    hsit::save(&cube_path, &half).unwrap();
    let out_dir = dir.path().join("plots");
    let out = ok(&[
        "plot",
        "--cube",
        p(&cube_path),
        "--channels",
        "0,1",
        "--out-dir",
        p(&out_dir),
        "--spectral-at",
        "0,0",
        "--ref",
        p(&cube_path),
    ]);
    assert!(out.contains("pearson 1.000000"), "{out}");
    let img = std::fs::read(out_dir.join("channel_00.pgm")).unwrap();
    assert!(img.starts_with(b"P5\n5 4\n255\n"));
    assert_eq!(img.len(), 11 + 20);
    assert!(img[11..].iter().all(|&v| v == 128));
    let csv = std::fs::read_to_string(out_dir.join("spectrum.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn plot_rejects_out_of_range_channel() {
    let dir = tempfile::tempdir().unwrap();
    let cube_path = dir.path().join("c.hsit");
    hsit::save(&cube_path, &Tensor::<f32>::zeros(&[2, 2, 3])).unwrap();
    assert_eq!(code(&["plot", "--cube", p(&cube_path), "--channels", "3", "--out-dir", p(dir.path())]), 1);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["count", "--no-such-flag"]), 1);
    assert_eq!(code(&["count", "--config", "mst-xl"]), 1);
    assert_eq!(code(&["gradcheck", "--module", "nope"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
}

#[test]
fn bad_containers_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.hsit");
    std::fs::write(&junk, b"not a tensor").unwrap();
    assert_eq!(code(&["eval", "--pred", p(&junk), "--gt", p(&junk)]), 2);
    assert_eq!(code(&["eval", "--pred", p(&dir.path().join("missing")), "--gt", p(&junk)]), 2);
}

#[test]
fn gradcheck_reports_groups() {
    let out = ok(&["gradcheck", "--module", "ffn"]);
    assert!(out.starts_with("module,group,checked,max_rel_err\n"));
    assert!(out.lines().any(|l| l.starts_with("max_rel_err ")));
}

#[test]
fn short_training_run_logs_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.hsib");
    let log = dir.path().join("loss.csv");
    let out = ok(&[
        "train",
        "--config",
        "toy",
        "--synthetic",
        "0",
        "--height",
        "16",
        "--width",
        "16",
        "--bands",
        "8",
        "--random-mask",
        "1",
        "--steps-per-epoch",
        "4",
        "--no-augment",
        "--snapshot-every",
        "2",
        "--log",
        p(&log),
        "--out",
        p(&weights),
    ]);
    assert!(out.starts_with("steps 4 loss "), "{out}");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 5);
    assert!(dir.path().join("w.hsib.step2").is_file());
    let model = MstModel::<f32>::load(&weights).unwrap();
    assert_eq!(model.config(), &MstConfig::toy());

    let resumed = dir.path().join("w2.hsib");
    ok(&[
        "train",
        "--init",
        p(&weights),
        "--synthetic",
        "0",
        "--height",
        "16",
        "--width",
        "16",
        "--bands",
        "8",
        "--random-mask",
        "1",
        "--steps-per-epoch",
        "1",
        "--out",
        p(&resumed),
    ]);
    assert!(resumed.is_file());
}
