//! Noise sources against their closed-form CDFs, plus stream properties.

use concrete_core::noise::{streams, RngStream};
use concrete_core::oracle::{ks_one_sample, ks_two_sample};
use proptest::prelude::*;

const N: usize = 50_000;

#[test]
fn uniform_gumbel_logistic_pass_ks() {
    let mut rng = RngStream::new(17, streams::TRAIN_NOISE);
    let u: Vec<f64> = (0..N).map(|_| rng.uniform()).collect();
    let g: Vec<f64> = (0..N).map(|_| rng.gumbel()).collect();
    let l: Vec<f64> = (0..N).map(|_| rng.logistic()).collect();
    assert!(ks_one_sample(&u, |x| x).passes(0.01));
    assert!(ks_one_sample(&g, |x| (-(-x).exp()).exp()).passes(0.01));
    assert!(ks_one_sample(&l, |x| 1.0 / (1.0 + (-x).exp())).passes(0.01));
}

#[test]
fn gumbel_difference_is_logistic() {
    let mut rng = RngStream::new(18, 1);
    let d: Vec<f64> = (0..N).map(|_| rng.gumbel() - rng.gumbel()).collect();
    let l: Vec<f64> = (0..N).map(|_| rng.logistic()).collect();
    assert!(ks_two_sample(&d, &l).passes(0.01));
}

#[test]
fn streams_are_replayable_and_distinct() {
    let draw = |seed, id| {
        let mut r = RngStream::new(seed, id);
        (0..8).map(|_| r.next_u64()).collect::<Vec<_>>()
    };
    assert_eq!(draw(5, streams::INIT), draw(5, streams::INIT));
    assert_ne!(draw(5, streams::INIT), draw(5, streams::SHUFFLE));
    assert_ne!(draw(5, streams::INIT), draw(6, streams::INIT));
}

proptest! {
    #[test]
    fn uniforms_stay_strictly_inside_the_unit_interval(seed in any::<u64>(), id in 0u64..16) {
        let mut r = RngStream::new(seed, id);
        for _ in 0..256 {
            let u = r.uniform();
            prop_assert!(u > 0.0 && u < 1.0);
            prop_assert!(r.gumbel().is_finite() && r.logistic().is_finite());
        }
    }

    #[test]
    fn child_streams_ignore_parent_position(seed in any::<u64>(), skip in 0usize..64, child in any::<u64>()) {
        let parent = RngStream::new(seed, streams::EVAL_NOISE);
        let mut advanced = parent.clone();
        for _ in 0..skip {
            advanced.next_u64();
        }
        prop_assert_eq!(parent.child(child).next_u64(), advanced.child(child).next_u64());
    }
}
