use talsc_core::verify::{gradient_suite, run_suite, SUITES};

#[test]
fn every_suite_passes() {
    for name in SUITES {
        let report = run_suite(name, 17).unwrap();
        for c in &report.checks {
            println!("{name}: {} observed {:.3e} expected {}", c.name, c.observed, c.expected);
        }
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn sign_flip_in_a_backward_pass_fails_the_gradient_suite() {
    for kind in ["dense", "conv", "transposed_conv", "sigmoid", "relu", "channel", "kan", "mlp"] {
        let report = gradient_suite(17, Some(kind)).unwrap();
        assert!(!report.passed(), "mutation of {kind} went unnoticed");
    }
    assert!(gradient_suite(17, None).unwrap().passed());
}

#[test]
fn unknown_suite_is_an_error() {
    assert!(run_suite("nope", 1).is_err());
}
