mod common;

use common::checks::refine_fuzz;
use fcnt_core::refine::refine;
use fcnt_core::{LabelMap, ScoreVolume};

#[test]
fn refinement_contract_on_fuzzed_volumes() {
    let r = refine_fuzz(300, 404);
    assert!(
        r.violations.is_empty(),
        "{:#?}",
        &r.violations[..r.violations.len().min(5)]
    );
    assert!(r.converged > 0 && r.forced > 0, "{r:?}");
}

#[test]
fn hand_traced_strip() {
    // Argmax A A B A B B, with every pixel's second choice the other class.
    let argmax = [0u8, 0, 1, 0, 1, 1];
    let s = ScoreVolume::from_fn(
        2,
        1,
        6,
        |c, _, x| if c as u8 == argmax[x] { 1.0 } else { 0.0 },
    );
    let r = refine(&s, 2).unwrap();
    assert_eq!(r.labels, LabelMap::parse("0 0 0 1 1 1").unwrap());
    assert!(!r.forced());
}
