mod common;

use common::*;

#[test]
fn alignment_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = align_gradient_error(seed, 60);
        assert!(e <= 1e-4, "seed {seed}: {e:e}");
    }
}

#[test]
fn aggregation_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = agg_gradient_error(seed, 60);
        assert!(e <= 1e-4, "seed {seed}: {e:e}");
    }
}
