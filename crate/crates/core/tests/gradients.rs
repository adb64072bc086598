use mst_core::gradsuite;
use mst_core::tensor::gradcheck::{self, worst};
use mst_core::Tensor;

#[test]
fn every_suite_agrees_with_finite_differences() {
    for seed in [0, 7, 13] {
        for module in gradsuite::MODULES {
            let reports = gradsuite::run(module, seed).unwrap();
            assert!(!reports.is_empty());
            for r in &reports {
                assert!(r.checked > 0, "{module}/{} probed nothing", r.name);
                assert!(r.max_rel_err < 1e-4, "{module}/{} seed {seed}: {:.3e}", r.name, r.max_rel_err);
            }
        }
    }
}

#[test]
fn summaries_cover_every_report() {
    let reports = gradsuite::run("model", 1).unwrap();
    let groups = gradsuite::summarize("model", &reports);
    let checked: usize = groups.iter().map(|g| g.1).sum();
    assert_eq!(checked, reports.iter().map(|r| r.checked).sum::<usize>());
    assert!((groups.iter().map(|g| g.2).fold(0.0, f64::max) - worst(&reports)).abs() == 0.0);
}

#[test]
fn unknown_suite_is_rejected() {
    assert!(gradsuite::run("nope", 0).is_err());
}

#[test]
fn checker_catches_a_wrong_gradient() {
    // A loss whose tape gradient is deliberately detached from one factor.
    let x = Tensor::new(&[3], vec![0.3, -0.8, 1.2]).unwrap();
    let reports = gradcheck::check(
        &[("x".into(), x)],
        |tape, v| {
            let frozen = tape.constant(tape.value(v[0]).clone());
            let p = tape.mul(v[0], frozen)?;
            Ok(tape.sum(p))
        },
        gradcheck::FD_EPS,
        None,
    )
    .unwrap();
    assert!(reports[0].max_rel_err > 0.4);
}
