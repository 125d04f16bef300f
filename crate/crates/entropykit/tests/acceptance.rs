//! Acceptance gate: each battery check as its own test, in order. The
//! tolerances live next to the checks in `entropykit::validate`.

use entropykit::validate;

fn assert_check(outcome: validate::Check) {
    assert!(outcome.passed, "{} failed: {}", outcome.name, outcome.details);
    eprintln!("{}: {}", outcome.name, outcome.details);
}

#[test]
fn criterion_01_shannon_oracles() {
    assert_check(validate::check_shannon_oracles());
}

#[test]
fn criterion_02_entropy_rate_oracle() {
    assert_check(validate::check_entropy_rate_oracle());
}

#[test]
fn criterion_03_ep_driven_ring() {
    assert_check(validate::check_ep_ring());
}

#[test]
fn criterion_04_ep_equilibrium() {
    assert_check(validate::check_ep_equilibrium());
}

#[test]
fn criterion_05_exact_antisymmetry() {
    assert_check(validate::check_antisymmetry());
}

#[test]
fn criterion_06_gradient_check() {
    assert_check(validate::check_gradient());
}

#[test]
fn criterion_07_pipeline_statistics() {
    assert_check(validate::check_pipeline_statistics());
}

#[test]
fn criterion_08_windowing_partition() {
    assert_check(validate::check_window_partition());
}

#[test]
fn criterion_09_end_to_end_determinism() {
    assert_check(validate::check_determinism());
}

#[test]
fn criterion_10_baseline_protocol() {
    assert_check(validate::check_baseline_protocol());
}
