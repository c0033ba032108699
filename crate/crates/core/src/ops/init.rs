use rand::Rng;

use crate::tensor::{Shape, Tensor};

/// `(fan_in, fan_out)` of a weight tensor `out x in x kh x kw`.
pub fn fans(shape: Shape) -> (usize, usize) {
    let receptive = shape.h * shape.w;
    (shape.c * receptive, shape.n * receptive)
}

/// Xavier (Glorot) uniform draw in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<R: Rng + ?Sized>(shape: impl Into<Shape>, rng: &mut R) -> Tensor {
    let shape = shape.into();
    let (fan_in, fan_out) = fans(shape);
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..shape.len())
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
