mod common;

use common::checks::{kernel_oracles, op_gradients};

#[test]
fn kernels_match_nested_loop_oracles() {
    for m in kernel_oracles(150, 101) {
        assert!(m.worst <= 1e-12, "{}: relative error {:e}", m.name, m.worst);
    }
}

#[test]
fn op_gradients_match_finite_differences() {
    for m in op_gradients(40, 202) {
        assert!(m.worst <= 1e-4, "{}: relative error {:e}", m.name, m.worst);
    }
}
