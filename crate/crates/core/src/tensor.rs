//! Dense rank-4 tensors.
//!
//! Layout is batch-outermost row-major: the flat index of `(n, c, y, x)` is
//! `((n * channels + c) * height + y) * width + x`. Every kernel and every
//! serialized buffer in this crate uses this order.

use std::fmt;

use crate::error::{check_dim, Error, Result};

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of elements in one `h x w` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub const fn to_array(self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Checks every extent against `other`, naming the first axis that differs.
    pub fn expect(&self, other: &Shape) -> Result<()> {
        check_dim("batch", other.n, self.n)?;
        check_dim("channels", other.c, self.c)?;
        check_dim("height", other.h, self.h)?;
        check_dim("width", other.w, self.w)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(a: [usize; 4]) -> Self {
        Shape::new(a[0], a[1], a[2], a[3])
    }
}

/// Dense `f64` tensor with an optional gradient buffer of the same shape.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_dim("buffer length", shape.len(), data.len())?;
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every position.
    pub fn from_fn(
        shape: impl Into<Shape>,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.shape.index(n, c, y, x);
        &mut self.data[i]
    }

    /// The contiguous `h x w` plane for `(n, c)`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.shape.index(n, c, 0, 0);
        &self.data[start..start + self.shape.plane()]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let start = self.shape.index(n, c, 0, 0);
        let len = self.shape.plane();
        &mut self.data[start..start + len]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Attaches a gradient buffer; it must match the value shape exactly.
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        check_dim("gradient length", self.data.len(), grad.len())?;
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    /// Same buffer, new extents with the same element count.
    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        check_dim("element count", self.shape.len(), shape.len())?;
        self.shape = shape;
        Ok(self)
    }

    /// Copies batch item `n` out as a `1 x C x H x W` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let s = self.shape;
        let per = s.c * s.plane();
        Tensor {
            shape: Shape::new(1, s.c, s.h, s.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
            grad: None,
        }
    }

    /// Crops `[y0, y0 + h) x [x0, x0 + w)` from every plane.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape;
        if y0 + h > s.h {
            return Err(Error::dim("height", s.h, y0 + h));
        }
        if x0 + w > s.w {
            return Err(Error::dim("width", s.w, x0 + w));
        }
        let mut out = Tensor::zeros([s.n, s.c, h, w]);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..h {
                    let src = s.index(n, c, y0 + y, x0);
                    let dst = out.shape.index(n, c, y, 0);
                    out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
                }
            }
        }
        Ok(out)
    }

    /// Pads bottom and right edges by replicating the last row/column.
    pub fn pad_replicate(&self, h: usize, w: usize) -> Tensor {
        let s = self.shape;
        assert!(h >= s.h && w >= s.w, "pad target smaller than tensor");
        Tensor::from_fn([s.n, s.c, h, w], |n, c, y, x| {
            self.at(n, c, y.min(s.h - 1), x.min(s.w - 1))
        })
    }

    /// Stacks channel-compatible single-item tensors along the channel axis
    /// of a new tensor with `copies` replicated channels.
    pub fn replicate_channels(&self, copies: usize) -> Result<Tensor> {
        check_dim("channels", 1, self.shape.c)?;
        let s = self.shape;
        Ok(Tensor::from_fn([s.n, copies, s.h, s.w], |n, _, y, x| {
            self.at(n, 0, y, x)
        }))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.shape.expect(&other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}
