//! Bilinear resampling and learned (transposed-convolution) upsampling.
//!
//! Bilinear sampling uses the half-pixel convention: output pixel `y` of an
//! `out_h`-row image samples source row `(y + 0.5) * in_h / out_h - 0.5`,
//! clamped to the image. Learned upsampling by `f` replicate-pads the input
//! by one pixel, applies a stride-`f` transposed convolution with a `2f x 2f`
//! kernel and crops the centre `h*f x w*f`. With the kernel initialized by
//! [`bilinear_upsample_params`] the two modes agree to rounding.

use crate::error::{check_dim, Error, Result};
use crate::ops::conv::{
    conv_transpose2d_backward, conv_transpose2d_forward, ConvGrads, ConvParams,
};
use crate::tensor::{Shape, Tensor};

/// How an upsampling stage computes its output.
#[derive(Clone, Copy, Debug)]
pub enum UpsampleMode<'a> {
    Bilinear,
    Learned(&'a ConvParams),
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize of every plane to `out_h x out_w`.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::InvalidArgument(
            "bilinear resize of an empty extent".into(),
        ));
    }
    let ty = taps(s.h, out_h);
    let tx = taps(s.w, out_w);
    let mut out = Tensor::zeros([s.n, s.c, out_h, out_w]);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let v00 = src[a.lo * s.w + b.lo];
                    let v01 = src[a.lo * s.w + b.hi];
                    let v10 = src[a.hi * s.w + b.lo];
                    let v11 = src[a.hi * s.w + b.hi];
                    let top = v00 * (1.0 - b.frac) + v01 * b.frac;
                    let bot = v10 * (1.0 - b.frac) + v11 * b.frac;
                    dst[oy * out_w + ox] = top * (1.0 - a.frac) + bot * a.frac;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`resize_bilinear`]: scatters `grad_out` back onto `input_shape`.
pub fn resize_bilinear_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let g = grad_out.shape();
    check_dim("batch", input_shape.n, g.n)?;
    check_dim("channels", input_shape.c, g.c)?;
    let ty = taps(input_shape.h, g.h);
    let tx = taps(input_shape.w, g.w);
    let w = input_shape.w;
    let mut grad_in = Tensor::zeros(input_shape);
    for n in 0..g.n {
        for c in 0..g.c {
            let src = grad_out.plane(n, c);
            let dst = grad_in.plane_mut(n, c);
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let v = src[oy * g.w + ox];
                    dst[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                    dst[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                    dst[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                    dst[a.hi * w + b.hi] += v * a.frac * b.frac;
                }
            }
        }
    }
    Ok(grad_in)
}

/// One-dimensional bilinear kernel of length `2 * factor`.
pub fn bilinear_kernel(factor: usize) -> Vec<f64> {
    let f = factor as f64;
    let center = if factor.is_multiple_of(2) {
        f - 0.5
    } else {
        f - 1.0
    };
    (0..2 * factor)
        .map(|t| (1.0 - (t as f64 - center).abs() / f).max(0.0))
        .collect()
}

/// Channel-diagonal bilinear transposed-convolution parameters for
/// learned upsampling of `channels` planes by `factor`.
pub fn bilinear_upsample_params(channels: usize, factor: usize) -> Result<ConvParams> {
    check_factor(factor)?;
    let k = bilinear_kernel(factor);
    let kk = 2 * factor;
    let weight = Tensor::from_fn([channels, channels, kk, kk], |i, o, y, x| {
        if i == o {
            k[y] * k[x]
        } else {
            0.0
        }
    });
    ConvParams::transposed(weight, vec![0.0; channels], factor, 0)
}

fn check_factor(factor: usize) -> Result<()> {
    if factor == 0 {
        Err(Error::InvalidArgument(
            "upsampling factor must be >= 1".into(),
        ))
    } else {
        Ok(())
    }
}

fn learned_factor(params: &ConvParams) -> Result<usize> {
    let (kh, kw) = params.kernel();
    let f = params.stride;
    if kh != 2 * f || kw != 2 * f || params.padding != 0 {
        return Err(Error::InvalidArgument(format!(
            "learned upsampling expects a {0}x{0} kernel with stride {f} and no padding",
            2 * f
        )));
    }
    Ok(f)
}

fn crop_offset(factor: usize) -> usize {
    3 * factor / 2
}

fn pad_border(input: &Tensor) -> Tensor {
    let s = input.shape();
    Tensor::from_fn([s.n, s.c, s.h + 2, s.w + 2], |n, c, y, x| {
        let sy = y.saturating_sub(1).min(s.h - 1);
        let sx = x.saturating_sub(1).min(s.w - 1);
        input.at(n, c, sy, sx)
    })
}

fn pad_border_backward(shape: Shape, grad: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(shape);
    let g = grad.shape();
    for n in 0..g.n {
        for c in 0..g.c {
            for y in 0..g.h {
                let sy = y.saturating_sub(1).min(shape.h - 1);
                for x in 0..g.w {
                    let sx = x.saturating_sub(1).min(shape.w - 1);
                    *out.at_mut(n, c, sy, sx) += grad.at(n, c, y, x);
                }
            }
        }
    }
    out
}

/// Upsamples every plane by `factor`.
pub fn upsample(input: &Tensor, factor: usize, mode: UpsampleMode<'_>) -> Result<Tensor> {
    check_factor(factor)?;
    let s = input.shape();
    match mode {
        UpsampleMode::Bilinear => {
            if factor == 1 {
                return Ok(input.clone());
            }
            resize_bilinear(input, s.h * factor, s.w * factor)
        }
        UpsampleMode::Learned(params) => {
            check_dim("upsampling factor", learned_factor(params)?, factor)?;
            let full = conv_transpose2d_forward(&pad_border(input), params)?;
            let off = crop_offset(factor);
            full.crop(off, off, s.h * factor, s.w * factor)
        }
    }
}

/// Gradients of [`upsample`]; parameter gradients only in learned mode.
pub fn upsample_backward(
    input: &Tensor,
    factor: usize,
    mode: UpsampleMode<'_>,
    grad_out: &Tensor,
) -> Result<(Tensor, Option<ConvGrads>)> {
    check_factor(factor)?;
    let s = input.shape();
    grad_out
        .shape()
        .expect(&Shape::new(s.n, s.c, s.h * factor, s.w * factor))?;
    match mode {
        UpsampleMode::Bilinear => {
            if factor == 1 {
                return Ok((grad_out.clone(), None));
            }
            Ok((resize_bilinear_backward(s, grad_out)?, None))
        }
        UpsampleMode::Learned(params) => {
            check_dim("upsampling factor", learned_factor(params)?, factor)?;
            let padded = pad_border(input);
            let (fh, fw) = params.transposed_output_hw(s.h + 2, s.w + 2)?;
            let off = crop_offset(factor);
            let mut full = Tensor::zeros([s.n, params.in_channels(), fh, fw]);
            let g = grad_out.shape();
            for n in 0..g.n {
                for c in 0..g.c {
                    for y in 0..g.h {
                        let src = grad_out.shape().index(n, c, y, 0);
                        let dst = full.shape().index(n, c, y + off, off);
                        full.data_mut()[dst..dst + g.w]
                            .copy_from_slice(&grad_out.data()[src..src + g.w]);
                    }
                }
            }
            let (g_pad, grads) = conv_transpose2d_backward(&padded, params, &full)?;
            Ok((pad_border_backward(s, &g_pad), Some(grads)))
        }
    }
}
