//! Central finite differences against the analytic BPTT gradients.

mod common;

use common::{gradient_check, REL_TOL};
use mds_core::lstm::LstmParams;

#[test]
fn every_tensor_matches_finite_differences() {
    let r = gradient_check(2024, 8, 156, 20);
    assert!(
        r.worst <= REL_TOL,
        "worst relative error {:e} at {}",
        r.worst,
        r.worst_at
    );
    assert_eq!(r.checked, LstmParams::zeros(8, 156).num_params());
}

#[test]
fn small_dense_layer_also_matches() {
    for seed in 0..3 {
        let r = gradient_check(seed, 3, 5, 6);
        assert!(
            r.worst <= REL_TOL,
            "seed {seed}: {:e} at {}",
            r.worst,
            r.worst_at
        );
    }
}
