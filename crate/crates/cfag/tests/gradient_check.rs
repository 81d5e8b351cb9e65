//! Analytic-vs-numeric gradient agreement for every variant combination.
//!
//! The central-difference oracle re-evaluates the loss as a black box; the
//! analytic side comes from the hand-derived backward pass.

mod common;

use common::{all_variant_hps, max_gradient_error, variant_label};

const TOLERANCE: f64 = 1e-4;

#[test]
fn gradients_match_finite_differences_one_layer() {
    for hp in all_variant_hps(1) {
        let err = max_gradient_error(&hp, 17);
        assert!(
            err < TOLERANCE,
            "{}: max relative error {err:.3e}",
            variant_label(&hp)
        );
    }
}

#[test]
fn gradients_match_finite_differences_two_layers() {
    for hp in all_variant_hps(2) {
        let err = max_gradient_error(&hp, 29);
        assert!(
            err < TOLERANCE,
            "{}: max relative error {err:.3e}",
            variant_label(&hp)
        );
    }
}

#[test]
fn transposed_relatedness_orientation_also_differentiates() {
    let mut hps = all_variant_hps(1);
    hps.truncate(4); // the four pa modes under the default variant set
    for mut hp in hps {
        hp.relatedness_row_norm = true;
        let err = max_gradient_error(&hp, 31);
        assert!(
            err < TOLERANCE,
            "{} (row-norm): max relative error {err:.3e}",
            variant_label(&hp)
        );
    }
}
