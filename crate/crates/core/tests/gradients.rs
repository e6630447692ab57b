//! Analytic gradients of every loss term against central finite differences.

use std::time::{Duration, Instant};

use apbface_core::gradcheck::{run_all, ENTRIES_PER_TENSOR};

#[test]
fn every_loss_term_matches_finite_differences() {
    let start = Instant::now();
    let checks = run_all(7).unwrap();
    assert_eq!(checks.len(), 9);
    for c in &checks {
        assert!(c.passes(1e-4), "{}: relative error {:.3e} at {}", c.name, c.max_rel_error, c.worst);
        assert!(c.tensors > 0 && c.entries > 0, "{} checked nothing", c.name);
    }
    assert!(start.elapsed() < Duration::from_secs(120));
}

#[test]
fn checks_are_seed_independent() {
    for seed in [1, 2] {
        for c in run_all(seed).unwrap() {
            assert!(c.passes(1e-4), "seed {seed} {}: {:.3e}", c.name, c.max_rel_error);
        }
    }
    assert!(ENTRIES_PER_TENSOR > 0);
}
