//! Shared helpers for unit tests: seeded random tensors and finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

pub fn random_tensor(shape: impl Into<Shape>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = shape.into();
    let data = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Central differences of `f` at `x` with step 1e-4.
pub fn finite_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-4;
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = f(&v);
            v[i] = orig - h;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-entry relative error. Entries more than six orders of
/// magnitude below the largest reference entry are measured against that
/// floor instead of their own magnitude.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (scale * 1e-6).max(1e-300);
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
