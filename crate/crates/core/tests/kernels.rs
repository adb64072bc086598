use mst_core::rng;
use mst_core::tensor::kernels;
use mst_core::{Tape, Tensor};
use proptest::prelude::*;

fn rand(seed: u64, shape: &[usize]) -> Tensor<f64> {
    rng::uniform(&mut rng::seeded(seed), shape, -1.0, 1.0)
}

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, cig, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[co, ho, wo]);
    for o in 0..co {
        let g = o / (co / groups);
        for i in 0..cig {
            for a in 0..k {
                for b in 0..k {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let sy = (y * stride + a) as isize - pad as isize;
                            let sx = (xx * stride + b) as isize - pad as isize;
                            if sy < 0 || sx < 0 || sy as usize >= h || sx as usize >= wd {
                                continue;
                            }
                            let v = out.get(&[o, y, xx])
                                + w.get(&[o, i, a, b]) * x.get(&[g * cig + i, sy as usize, sx as usize]);
                            out.set(&[o, y, xx], v);
                        }
                    }
                }
            }
        }
    }
    let _ = ci;
    out
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_matches_loops(seed in any::<u64>(), m in 1usize..9, k in 1usize..9, n in 1usize..9) {
        let a = rand(seed, &[m, k]);
        let b = rand(seed ^ 7, &[k, n]);
        let want = Tensor::from_fn(&[m, n], |i| (0..k).map(|t| a.get(&[i / n, t]) * b.get(&[t, i % n])).sum());
        prop_assert!(close(&kernels::matmul(&a, &b).unwrap(), &want, 1e-12));
    }

    #[test]
    fn conv_matches_loops(
        seed in any::<u64>(),
        groups in 1usize..4,
        per_group in 1usize..3,
        out_mult in 1usize..3,
        k in prop::sample::select(vec![1usize, 3, 4, 5]),
        stride in 1usize..3,
        h in 4usize..9,
    ) {
        let ci = groups * per_group;
        let co = groups * out_mult;
        let pad = k / 2;
        let wd = h + 1;
        prop_assume!((h + 2 * pad - k) % stride == 0 && (wd + 2 * pad - k) % stride == 0);
        let x = rand(seed, &[ci, h, wd]);
        let w = rand(seed ^ 3, &[co, per_group, k, k]);
        let got = kernels::conv2d(&x, &w, stride, pad, groups).unwrap();
        prop_assert!(close(&got, &conv_oracle(&x, &w, stride, pad, groups), 1e-12));
    }

    #[test]
    fn transposed_conv_is_adjoint(seed in any::<u64>(), ci in 1usize..4, co in 1usize..4, h in 1usize..5, w in 1usize..5) {
        // <T(x), y> = <x, C(y)> where C is the stride-2 kernel-2 convolution.
        let x = rand(seed, &[ci, h, w]);
        let y = rand(seed ^ 5, &[co, 2 * h, 2 * w]);
        let wt = rand(seed ^ 9, &[ci, co, 2, 2]);
        let tx = kernels::conv2d_transpose(&x, &wt, 2, 2).unwrap();
        let cy = kernels::conv2d(&y, &wt, 2, 0, 1).unwrap();
        let (l, r) = (tx.dot(&y).unwrap(), x.dot(&cy).unwrap());
        prop_assert!((l - r).abs() < 1e-10);
    }

    #[test]
    fn softmax_columns_sum_to_one(seed in any::<u64>(), r in 1usize..8, c in 1usize..8) {
        let x = rand(seed, &[r, c]).map(|v| v * 30.0);
        let s = kernels::softmax(&x, 0).unwrap();
        for j in 0..c {
            let sum: f64 = (0..r).map(|i| s.get(&[i, j])).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn permute_round_trips(seed in any::<u64>(), a in 1usize..5, b in 1usize..5, c in 1usize..5) {
        let x = rand(seed, &[a, b, c]);
        let perm = [2, 0, 1];
        let y = kernels::permute(&x, &perm).unwrap();
        prop_assert_eq!(y.shape(), &[c, a, b][..]);
        prop_assert_eq!(kernels::permute(&y, &kernels::inverse_permutation(&perm)).unwrap(), x);
    }
}

#[test]
fn tape_counts_matmul_and_conv_work() {
    let mut tape = Tape::new();
    let a = tape.constant(rand(1, &[3, 4]));
    let b = tape.constant(rand(2, &[4, 5]));
    tape.matmul(a, b).unwrap();
    assert_eq!(tape.macs(), 60);
    let x = tape.constant(rand(3, &[4, 6, 6]));
    let w = tape.constant(rand(4, &[8, 2, 3, 3]));
    tape.conv2d(x, w, 1, 1, 2).unwrap();
    assert_eq!(tape.macs(), 60 + 36 * 8 * 2 * 9);
    let wt = tape.constant(rand(5, &[4, 2, 2, 2]));
    tape.conv2d_transpose(x, wt, 2, 2).unwrap();
    assert_eq!(tape.macs(), 60 + 36 * 8 * 2 * 9 + 4 * 36 * 2 * 4);
}

#[test]
fn conv_rejects_fractional_extents() {
    assert!(kernels::conv2d(&rand(1, &[1, 5, 5]), &rand(2, &[1, 1, 4, 4]), 2, 1, 1).is_err());
    assert!(kernels::conv2d(&rand(1, &[3, 4, 4]), &rand(2, &[2, 1, 3, 3]), 1, 1, 2).is_err());
}

#[test]
fn threaded_kernels_are_bitwise_stable() {
    let x = rand(1, &[16, 20, 20]);
    let w = rand(2, &[16, 1, 3, 3]);
    let a = rand(3, &[64, 48]);
    let b = rand(4, &[48, 40]);
    kernels::set_threads(1);
    let (c1, m1) = (kernels::conv2d(&x, &w, 1, 1, 16).unwrap(), kernels::matmul(&a, &b).unwrap());
    kernels::set_threads(3);
    let (c3, m3) = (kernels::conv2d(&x, &w, 1, 1, 16).unwrap(), kernels::matmul(&a, &b).unwrap());
    kernels::set_threads(1);
    assert_eq!(c1, c3);
    assert_eq!(m1, m3);
}
