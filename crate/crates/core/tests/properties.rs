mod common;

use common::CASES;

#[test]
fn hidden_units_stay_inside_the_tanh_range() {
    common::tanh_bound(CASES).unwrap();
}

#[test]
fn softmax_is_normalized_and_shift_invariant() {
    common::softmax(CASES).unwrap();
}

#[test]
fn hinge_depends_only_on_the_margin() {
    common::hinge_margin_dependence(CASES).unwrap();
}

#[test]
fn gmm_fit_is_affine_equivariant() {
    common::gmm_affine_equivariance(CASES).unwrap();
}

#[test]
fn gmm_fit_ignores_score_order() {
    common::gmm_permutation_invariance(CASES).unwrap();
}

#[test]
fn macro_f_is_symmetric_in_the_classes() {
    common::macro_f_swap_symmetry(CASES).unwrap();
}

#[test]
fn predictions_survive_positive_rescaling() {
    common::predict_scaling_invariance(CASES).unwrap();
}
