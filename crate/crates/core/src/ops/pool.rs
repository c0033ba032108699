//! 2x2 max pooling with stride 2.
//!
//! Odd extents are handled by replicating the last row/column, so the output
//! is `ceil(h/2) x ceil(w/2)`. A replicated pixel routes its gradient back to
//! the original. Within a window the first maximum in raster order wins.

use crate::error::Result;
use crate::tensor::{Shape, Tensor};

/// Winning input index (flat, into the pooled tensor) for every output value.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    input_shape: Shape,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn pooled_extent(n: usize) -> usize {
    n.div_ceil(2)
}

pub fn maxpool_forward(input: &Tensor) -> (Tensor, PoolIndices) {
    let s = input.shape();
    let (oh, ow) = (pooled_extent(s.h), pooled_extent(s.w));
    let mut out = Tensor::zeros([s.n, s.c, oh, ow]);
    let mut argmax = Vec::with_capacity(out.shape().len());
    let data = input.data();
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                let y0 = 2 * oy;
                let y1 = (y0 + 1).min(s.h - 1);
                for ox in 0..ow {
                    let x0 = 2 * ox;
                    let x1 = (x0 + 1).min(s.w - 1);
                    let mut best = s.index(n, c, y0, x0);
                    for idx in [
                        s.index(n, c, y0, x1),
                        s.index(n, c, y1, x0),
                        s.index(n, c, y1, x1),
                    ] {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.data_mut()[o] = data[best];
                    argmax.push(best);
                    o += 1;
                }
            }
        }
    }
    (
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    )
}

pub fn maxpool_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    let s = indices.input_shape;
    grad_out.shape().expect(&Shape::new(
        s.n,
        s.c,
        pooled_extent(s.h),
        pooled_extent(s.w),
    ))?;
    let mut grad_in = Tensor::zeros(s);
    let gi = grad_in.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}
