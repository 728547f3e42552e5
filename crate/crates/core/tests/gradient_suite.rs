use std::time::Instant;

use mrae_core::checks::gradient_suite;

#[test]
fn suite_passes_on_five_seeds() {
    let started = Instant::now();
    for seed in 0..5 {
        let entries = gradient_suite(seed, 1e-5, 1e-4).unwrap();
        assert_eq!(entries.len(), 18);
        for e in &entries {
            assert!(e.passed, "{} seed {seed}: {}", e.name, e.max_rel_error);
            assert!(e.coords_checked > 0);
        }
        for name in ["path_soft", "path_mrae-t1", "path_mrae-t2", "path_mrae-t3", "conv2d", "softmax"] {
            assert!(entries.iter().any(|e| e.name == name), "missing {name}");
        }
    }
    assert!(started.elapsed().as_secs() < 60, "{:?}", started.elapsed());
}

#[test]
fn huge_tolerance_always_passes_and_tiny_fails() {
    assert!(gradient_suite(3, 1e-5, 1e30).unwrap().iter().all(|e| e.passed));
    assert!(gradient_suite(3, 1e-5, 0.0).unwrap().iter().any(|e| !e.passed));
}

#[test]
fn non_positive_step_is_rejected() {
    assert!(gradient_suite(0, 0.0, 1e-4).is_err());
    assert!(gradient_suite(0, -1e-5, 1e-4).is_err());
}
