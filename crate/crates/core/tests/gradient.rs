//! Analytic gradient of the X target against central finite differences.

mod common;

use common::checks::{gradient_errors, random_x_target};

#[test]
fn gradient_matches_finite_differences_on_twenty_instances() {
    for (seed, rel) in gradient_errors(20).into_iter().enumerate() {
        assert!(rel < 1e-5, "instance {seed}: relative error {rel:e}");
    }
}

#[test]
fn gradient_value_matches_log_density() {
    let (target, x) = random_x_target(99);
    let (v, _) = target.log_density_and_grad(&x).unwrap();
    assert!((v - target.log_density(&x).unwrap()).abs() < 1e-12);
}
