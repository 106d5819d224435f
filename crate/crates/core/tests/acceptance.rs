use std::sync::OnceLock;
use std::time::Instant;

use nits::verify::{self, Outcome, Recovery};

fn check(o: Outcome) {
    println!("{o}");
    assert!(o.passed, "{o}");
}

fn recovery() -> &'static (Vec<Recovery>, f64) {
    static RUNS: OnceLock<(Vec<Recovery>, f64)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let runs = verify::recovery_runs().expect("training runs complete");
        (runs, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_01_integration_trick() {
    check(verify::integration_trick());
}

#[test]
fn criterion_02_monotonicity() {
    check(verify::monotonicity());
}

#[test]
fn criterion_03_normalization() {
    check(verify::normalization());
}

#[test]
fn criterion_04_gradients() {
    check(verify::gradients());
}

#[test]
fn criterion_05_sampling() {
    check(verify::sampling());
}

#[test]
fn criterion_06_mixture_limit() {
    check(verify::lemma4_convergence());
}

#[test]
fn criterion_07_density_recovery() {
    let (runs, secs) = recovery();
    check(verify::density_recovery_outcome(runs, *secs));
}

#[test]
fn criterion_08_joint_normalization() {
    let (runs, _) = recovery();
    check(verify::joint_normalization(runs));
}

#[test]
fn criterion_09_discretized_likelihood() {
    check(verify::discretized_likelihood());
}

#[test]
fn criterion_10_determinism() {
    check(verify::determinism());
}
