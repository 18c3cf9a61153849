mod common;

use segmap::net::LossKind;

#[test]
fn every_loss_backpropagates_through_the_network() {
    for kind in LossKind::ALL {
        for seed in [1, 2] {
            let g = common::grad_check(kind, 24, seed);
            assert!(g.max_rel_err <= 1e-3, "{kind} seed {seed}: relative error {}", g.max_rel_err);
            assert!(g.nonzero >= 24, "{kind}: only {} non-trivial gradients", g.nonzero);
        }
    }
}
