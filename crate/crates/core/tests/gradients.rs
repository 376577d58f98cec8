mod support;

#[test]
fn text_mlp_gradients_match_finite_differences() {
    let worst = support::text_gradient_worst(120);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn vision_mil_gradients_match_finite_differences() {
    let worst = support::vision_gradient_worst(100);
    assert!(worst < 1e-3, "max relative error {worst}");
}
