//! 2-D convolution and transposed convolution via im2col.
//!
//! Forward outputs are accumulated as `bias + w[0]*x[0] + w[1]*x[1] + ...`
//! with taps in `(in_channel, ky, kx)` order, so results are bit-identical
//! to a plain nested-loop convolution that visits taps in the same order.

use crate::error::{check_dim, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Weights `out x in x kh x kw`, per-output-channel bias, stride and zero padding.
///
/// A transposed convolution stores its weights as `in x out x kh x kw`, which
/// is the same buffer as the convolution it is the adjoint of.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

/// Gradients with the same shapes as a [`ConvParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        let s = weight.shape();
        if s.h == 0 || s.w == 0 {
            return Err(Error::InvalidArgument("kernel extents must be >= 1".into()));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        check_dim("bias length", s.n, bias.len())?;
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Parameters of a transposed convolution; `weight` is `in x out x kh x kw`
    /// and `bias` has one entry per output channel (`weight` axis 1).
    pub fn transposed(
        weight: Tensor,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let s = weight.shape();
        if s.h == 0 || s.w == 0 {
            return Err(Error::InvalidArgument("kernel extents must be >= 1".into()));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        check_dim("bias length", s.c, bias.len())?;
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn zeros(
        out_ch: usize,
        in_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvParams {
            weight: Tensor::zeros([out_ch, in_ch, kh, kw]),
            bias: vec![0.0; out_ch],
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    pub fn param_count(&self) -> usize {
        self.weight.shape().len() + self.bias.len()
    }

    pub fn zero_grads(&self) -> ConvGrads {
        ConvGrads {
            weight: Tensor::zeros(self.weight.shape()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// Output extents of the convolution applied to an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < kh {
            return Err(Error::dim("padded height", kh, ph));
        }
        if pw < kw {
            return Err(Error::dim("padded width", kw, pw));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// Output extents of the transposed convolution applied to an `h x w` input.
    pub fn transposed_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let full_h = (h.max(1) - 1) * self.stride + kh;
        let full_w = (w.max(1) - 1) * self.stride + kw;
        if full_h <= 2 * self.padding || full_w <= 2 * self.padding {
            return Err(Error::InvalidArgument(
                "transposed convolution padding consumes the whole output".into(),
            ));
        }
        Ok((full_h - 2 * self.padding, full_w - 2 * self.padding))
    }
}

impl ConvGrads {
    pub fn scale(&mut self, k: f64) {
        self.weight.scale(k);
        self.bias.iter_mut().for_each(|b| *b *= k);
    }
}

struct Geometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn taps(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `in_c x in_h x in_w` image into a `taps x pixels` matrix.
fn im2col(g: &Geometry, image: &[f64], col: &mut [f64]) {
    let p_count = g.pixels();
    for c in 0..g.in_c {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p_count;
                let dst = &mut col[row..row + p_count];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a `taps x pixels` matrix back onto an image, summing overlaps.
fn col2im(g: &Geometry, col: &[f64], image: &mut [f64]) {
    let p_count = g.pixels();
    for c in 0..g.in_c {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p_count;
                let src = &col[row..row + p_count];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

const PIXEL_BLOCK: usize = 256;

/// `c += a * b` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
///
/// Every entry of `c` receives its `k` products in increasing `k` order.
pub(crate) fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut p0 = 0;
    while p0 < n {
        let p1 = (p0 + PIXEL_BLOCK).min(n);
        let width = p1 - p0;
        let mut i = 0;
        while i + 4 <= m {
            let (r0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (r0, r1, r2, r3) = (
                &mut r0[p0..p1],
                &mut r1[p0..p1],
                &mut r2[p0..p1],
                &mut r3[p0..p1],
            );
            for kk in 0..k {
                let w0 = a[i * k + kk];
                let w1 = a[(i + 1) * k + kk];
                let w2 = a[(i + 2) * k + kk];
                let w3 = a[(i + 3) * k + kk];
                let brow = &b[kk * n + p0..kk * n + p1];
                for p in 0..width {
                    let v = brow[p];
                    r0[p] += w0 * v;
                    r1[p] += w1 * v;
                    r2[p] += w2 * v;
                    r3[p] += w3 * v;
                }
            }
            i += 4;
        }
        while i < m {
            let row = &mut c[i * n + p0..i * n + p1];
            for kk in 0..k {
                let w = a[i * k + kk];
                let brow = &b[kk * n + p0..kk * n + p1];
                for (r, v) in row.iter_mut().zip(brow) {
                    *r += w * v;
                }
            }
            i += 1;
        }
        p0 = p1;
    }
}

/// `c += a * b^T` for row-major `a: m x n`, `b: k x n`, `c: m x k`.
pub(crate) fn gemm_abt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            c[i * k + j] += dot(arow, &b[j * n..(j + 1) * n]);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for q in 0..chunks {
        let x = &a[q * 4..q * 4 + 4];
        let y = &b[q * 4..q * 4 + 4];
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for q in chunks * 4..a.len() {
        tail += a[q] * b[q];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

fn geometry(params: &ConvParams, in_c: usize, in_h: usize, in_w: usize) -> Result<Geometry> {
    check_dim("input channels", params.in_channels(), in_c)?;
    let (out_h, out_w) = params.output_hw(in_h, in_w)?;
    let (kh, kw) = params.kernel();
    Ok(Geometry {
        in_c,
        in_h,
        in_w,
        kh,
        kw,
        stride: params.stride,
        pad: params.padding,
        out_h,
        out_w,
    })
}

/// Convolves every batch item of `input` with `params`.
pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    let g = geometry(params, s.c, s.h, s.w)?;
    let out_c = params.out_channels();
    let (taps, pixels) = (g.taps(), g.pixels());
    let mut out = Tensor::zeros([s.n, out_c, g.out_h, g.out_w]);
    let mut col = vec![0.0; taps * pixels];
    let per_in = s.c * s.plane();
    let per_out = out_c * pixels;
    for n in 0..s.n {
        im2col(&g, &input.data()[n * per_in..(n + 1) * per_in], &mut col);
        let dst = &mut out.data_mut()[n * per_out..(n + 1) * per_out];
        for (co, row) in dst.chunks_mut(pixels).enumerate() {
            row.fill(params.bias[co]);
        }
        gemm_acc(out_c, taps, pixels, params.weight.data(), &col, dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input and parameters.
pub fn conv2d_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, ConvGrads)> {
    let s = input.shape();
    let g = geometry(params, s.c, s.h, s.w)?;
    let out_c = params.out_channels();
    grad_out
        .shape()
        .expect(&Shape::new(s.n, out_c, g.out_h, g.out_w))?;
    let (taps, pixels) = (g.taps(), g.pixels());
    let w_t = transpose(out_c, taps, params.weight.data());
    let mut grad_in = Tensor::zeros(s);
    let mut grads = params.zero_grads();
    let mut col = vec![0.0; taps * pixels];
    let mut gcol = vec![0.0; taps * pixels];
    let per_in = s.c * s.plane();
    let per_out = out_c * pixels;
    for n in 0..s.n {
        let gout = &grad_out.data()[n * per_out..(n + 1) * per_out];
        for (co, row) in gout.chunks(pixels).enumerate() {
            grads.bias[co] += row.iter().sum::<f64>();
        }
        im2col(&g, &input.data()[n * per_in..(n + 1) * per_in], &mut col);
        gemm_abt_acc(out_c, taps, pixels, gout, &col, grads.weight.data_mut());
        gcol.fill(0.0);
        gemm_acc(taps, out_c, pixels, &w_t, gout, &mut gcol);
        col2im(
            &g,
            &gcol,
            &mut grad_in.data_mut()[n * per_in..(n + 1) * per_in],
        );
    }
    Ok((grad_in, grads))
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] (without bias)
/// plus a per-output-channel bias. `params.weight` is `in x out x kh x kw`.
pub fn conv_transpose2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    // The adjoint convolution maps out-channels -> in-channels.
    check_dim("input channels", params.out_channels(), s.c)?;
    let t_out_c = params.in_channels();
    check_dim("bias length", t_out_c, params.bias.len())?;
    let (out_h, out_w) = params.transposed_output_hw(s.h, s.w)?;
    let g = geometry(params, t_out_c, out_h, out_w)?;
    check_dim("height", g.out_h, s.h)?;
    check_dim("width", g.out_w, s.w)?;
    let (taps, pixels) = (g.taps(), g.pixels());
    let w_t = transpose(s.c, taps, params.weight.data());
    let mut out = Tensor::zeros([s.n, t_out_c, out_h, out_w]);
    let mut gcol = vec![0.0; taps * pixels];
    let per_in = s.c * pixels;
    let per_out = t_out_c * out_h * out_w;
    for n in 0..s.n {
        gcol.fill(0.0);
        gemm_acc(
            taps,
            s.c,
            pixels,
            &w_t,
            &input.data()[n * per_in..(n + 1) * per_in],
            &mut gcol,
        );
        let dst = &mut out.data_mut()[n * per_out..(n + 1) * per_out];
        col2im(&g, &gcol, dst);
        for (c, plane) in dst.chunks_mut(out_h * out_w).enumerate() {
            let b = params.bias[c];
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, ConvGrads)> {
    let s = input.shape();
    check_dim("input channels", params.out_channels(), s.c)?;
    let t_out_c = params.in_channels();
    let (out_h, out_w) = params.transposed_output_hw(s.h, s.w)?;
    grad_out
        .shape()
        .expect(&Shape::new(s.n, t_out_c, out_h, out_w))?;
    let g = geometry(params, t_out_c, out_h, out_w)?;
    let (taps, pixels) = (g.taps(), g.pixels());
    let mut grad_in = Tensor::zeros(s);
    let mut grads = ConvGrads {
        weight: Tensor::zeros(params.weight.shape()),
        bias: vec![0.0; t_out_c],
    };
    let mut col = vec![0.0; taps * pixels];
    let per_in = s.c * pixels;
    let per_out = t_out_c * out_h * out_w;
    for n in 0..s.n {
        let gout = &grad_out.data()[n * per_out..(n + 1) * per_out];
        for (c, plane) in gout.chunks(out_h * out_w).enumerate() {
            grads.bias[c] += plane.iter().sum::<f64>();
        }
        im2col(&g, gout, &mut col);
        let x = &input.data()[n * per_in..(n + 1) * per_in];
        gemm_abt_acc(s.c, taps, pixels, x, &col, grads.weight.data_mut());
        gemm_acc(
            s.c,
            taps,
            pixels,
            params.weight.data(),
            &col,
            &mut grad_in.data_mut()[n * per_in..(n + 1) * per_in],
        );
    }
    Ok((grad_in, grads))
}
