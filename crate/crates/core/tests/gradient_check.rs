mod common;

use stvg::model::Variant;

#[test]
fn fused1_gradients_match_central_differences() {
    let worst = common::max_gradient_error(Variant::Fused1, 41, 20);
    assert!(worst <= 1e-4, "relative error {worst:e}");
}

#[test]
fn fused5_gradients_match_central_differences() {
    let worst = common::max_gradient_error(Variant::Fused5, 42, 20);
    assert!(worst <= 1e-4, "relative error {worst:e}");
}
