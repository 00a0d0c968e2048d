#[path = "support/gradcheck.rs"]
mod gradcheck;

use gradcheck::{check, compare, Net};

fn assert_ok(seed: u64, reconstruct: bool) {
    let net = Net::random(seed, reconstruct);
    let c = check(&net);
    assert!(c.forward_gap < 1e-5, "seed {seed}: tape and reference disagree on the loss ({c:?})");
    assert!(c.rel_err <= 1e-3, "seed {seed}: {c:?}");
    assert!(c.compared * 2 >= net.num_params(), "seed {seed}: too many kink crossings ({c:?})");
}

#[test]
fn classifier_path_matches_finite_differences() {
    for seed in 0..20 {
        assert_ok(seed, false);
    }
}

#[test]
fn decoder_path_matches_finite_differences() {
    for seed in 100..120 {
        assert_ok(seed, true);
    }
}


#[test]
fn corrupted_gradients_are_detected() {
    for (seed, reconstruct) in [(3, false), (103, true)] {
        let net = Net::random(seed, reconstruct);
        let (loss, mut grads) = net.tape();
        assert!(compare(&net, loss, &grads).rel_err < 1e-5);
        for g in grads[0].iter_mut() {
            *g *= 1.01;
        }
        assert!(compare(&net, loss, &grads).rel_err > 1e-3);
    }
}
