//! Gradient checking: every differentiable operation, alone and in library
//! composites, against central finite differences over 100 random seeds.
//! The suites live in `fd_suite` so the acceptance gate can run the same
//! checks as a single criterion.

mod fd_suite;

#[test]
fn add_all_broadcast_shapes() {
    fd_suite::add_all_broadcast_shapes();
}

#[test]
fn sub_mul_chain() {
    fd_suite::sub_mul_chain();
}

#[test]
fn div_bounded_denominator() {
    fd_suite::div_bounded_denominator();
}

#[test]
fn min_elem_without_ties() {
    fd_suite::min_elem_without_ties();
}

#[test]
fn affine_and_exp_chain() {
    fd_suite::affine_and_exp_chain();
}

#[test]
fn pointwise_nonlinearities() {
    fd_suite::pointwise_nonlinearities();
}

#[test]
fn clamp_away_from_bounds() {
    fd_suite::clamp_away_from_bounds();
}

#[test]
fn matmul_composite() {
    fd_suite::matmul_composite();
}

#[test]
fn rowwise_vecmat_composite() {
    fd_suite::rowwise_vecmat_composite();
}

#[test]
fn row_reductions() {
    fd_suite::row_reductions();
}

#[test]
fn softmax_family() {
    fd_suite::softmax_family();
}

#[test]
fn mlp_elu_regression() {
    fd_suite::mlp_elu_regression();
}

#[test]
fn mlp_layer_norm_regression() {
    fd_suite::mlp_layer_norm_regression();
}

#[test]
fn mixer_hypernetwork_composite() {
    fd_suite::mixer_hypernetwork_composite();
}

#[test]
fn critic_stack_min_ensemble_composite() {
    fd_suite::critic_stack_min_ensemble_composite();
}

#[test]
fn value_losses() {
    fd_suite::value_losses();
}
