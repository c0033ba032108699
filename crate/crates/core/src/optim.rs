//! Stochastic gradient descent with momentum and weight decay.

use crate::error::{check_dim, Result};
use crate::model::{Gradients, NetworkState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// `v <- momentum * v - lr * (g + weight_decay * w); w <- w + v`
    pub fn update(&self, weights: &mut [f64], grads: &[f64], velocity: &mut [f64]) {
        debug_assert_eq!(weights.len(), grads.len());
        debug_assert_eq!(weights.len(), velocity.len());
        for ((w, g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            *v = self.momentum * *v - self.lr * (g + self.weight_decay * *w);
            *w += *v;
        }
    }
}

/// Applies one SGD update to every layer of `state`.
pub fn sgd_step(state: &mut NetworkState, grads: &Gradients, sgd: &Sgd) -> Result<()> {
    check_dim(
        "gradient layers",
        state.layers().len(),
        grads.layers().len(),
    )?;
    for (layer, g) in state.layers_mut().iter_mut().zip(grads.layers()) {
        layer.params.weight.shape().expect(&g.weight.shape())?;
        check_dim("bias gradient", layer.params.bias.len(), g.bias.len())?;
        sgd.update(
            layer.params.weight.data_mut(),
            g.weight.data(),
            layer.velocity.weight.data_mut(),
        );
        sgd.update(&mut layer.params.bias, &g.bias, &mut layer.velocity.bias);
    }
    Ok(())
}
