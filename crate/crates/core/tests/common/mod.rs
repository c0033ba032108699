//! Nested-loop reference implementations and measurement helpers shared by
//! the integration tests.
//!
//! Every numeric oracle returns the value together with the sum of the
//! absolute values of the terms that produced it. Relative errors are taken
//! against that magnitude, which bounds the rounding error of any summation
//! order.

#![allow(dead_code)]

pub mod checks;

use fcnt_core::label::{LabelMap, ScoreVolume, IGNORE};
use fcnt_core::ops::ConvParams;
use fcnt_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: [usize; 4], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Value and absolute-term magnitude, both shaped like the oracle output.
pub struct Oracle {
    pub value: Tensor,
    pub magnitude: Tensor,
}

/// Largest `|got - want| / magnitude` over all entries.
pub fn oracle_err(got: &Tensor, want: &Oracle) -> f64 {
    assert_eq!(got.shape(), want.value.shape());
    got.data()
        .iter()
        .zip(want.value.data())
        .zip(want.magnitude.data())
        .map(|((a, b), m)| {
            if a == b {
                0.0
            } else {
                (a - b).abs() / m.max(1e-300)
            }
        })
        .fold(0.0, f64::max)
}

/// Convolution with weights `out x in x kh x kw`, zero padding and stride.
pub fn conv_oracle(x: &Tensor, p: &ConvParams) -> Oracle {
    let s = x.shape();
    let w = p.weight.shape();
    let (st, pad) = (p.stride, p.padding);
    let oh = (s.h + 2 * pad - w.h) / st + 1;
    let ow = (s.w + 2 * pad - w.w) / st + 1;
    let mut value = Tensor::zeros([s.n, w.n, oh, ow]);
    let mut magnitude = Tensor::zeros([s.n, w.n, oh, ow]);
    for n in 0..s.n {
        for o in 0..w.n {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = p.bias[o];
                    let mut mag = p.bias[o].abs();
                    for i in 0..s.c {
                        for ky in 0..w.h {
                            for kx in 0..w.w {
                                let iy = (y * st + ky) as isize - pad as isize;
                                let ix = (xo * st + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let t = p.weight.at(o, i, ky, kx)
                                    * x.at(n, i, iy as usize, ix as usize);
                                acc += t;
                                mag += t.abs();
                            }
                        }
                    }
                    *value.at_mut(n, o, y, xo) = acc;
                    *magnitude.at_mut(n, o, y, xo) = mag;
                }
            }
        }
    }
    Oracle { value, magnitude }
}

/// Transposed convolution with weights `in x out x kh x kw`: input pixel
/// `(iy, ix)` spreads to output `(iy * s + ky - p, ix * s + kx - p)`.
pub fn conv_transpose_oracle(x: &Tensor, p: &ConvParams) -> Oracle {
    let s = x.shape();
    let w = p.weight.shape();
    let (st, pad) = (p.stride, p.padding);
    let oh = (s.h - 1) * st + w.h - 2 * pad;
    let ow = (s.w - 1) * st + w.w - 2 * pad;
    let mut value = Tensor::zeros([s.n, w.c, oh, ow]);
    let mut magnitude = Tensor::zeros([s.n, w.c, oh, ow]);
    for n in 0..s.n {
        for o in 0..w.c {
            for y in 0..oh {
                for xo in 0..ow {
                    *value.at_mut(n, o, y, xo) = p.bias[o];
                    *magnitude.at_mut(n, o, y, xo) = p.bias[o].abs();
                }
            }
            for i in 0..s.c {
                for iy in 0..s.h {
                    for ix in 0..s.w {
                        for ky in 0..w.h {
                            for kx in 0..w.w {
                                let y = (iy * st + ky) as isize - pad as isize;
                                let xo = (ix * st + kx) as isize - pad as isize;
                                if y < 0 || xo < 0 || y >= oh as isize || xo >= ow as isize {
                                    continue;
                                }
                                let t = p.weight.at(i, o, ky, kx) * x.at(n, i, iy, ix);
                                *value.at_mut(n, o, y as usize, xo as usize) += t;
                                *magnitude.at_mut(n, o, y as usize, xo as usize) += t.abs();
                            }
                        }
                    }
                }
            }
        }
    }
    Oracle { value, magnitude }
}

/// 2x2 stride-2 max pooling; out-of-range rows and columns replicate the
/// last one and the first maximum in raster order wins. Returns the pooled
/// values and the flat index of each winner.
pub fn pool_oracle(x: &Tensor) -> (Tensor, Vec<usize>) {
    let s = x.shape();
    let (oh, ow) = (s.h.div_ceil(2), s.w.div_ceil(2));
    let mut out = Tensor::zeros([s.n, s.c, oh, ow]);
    let mut arg = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best: Option<(usize, usize)> = None;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let iy = (2 * y + dy).min(s.h - 1);
                            let ix = (2 * xo + dx).min(s.w - 1);
                            match best {
                                Some((by, bx)) if x.at(n, c, iy, ix) <= x.at(n, c, by, bx) => {}
                                _ => best = Some((iy, ix)),
                            }
                        }
                    }
                    let (by, bx) = best.unwrap();
                    *out.at_mut(n, c, y, xo) = x.at(n, c, by, bx);
                    arg.push(x.shape().index(n, c, by, bx));
                }
            }
        }
    }
    (out, arg)
}

/// Softmax cross-entropy averaged over non-ignored pixels, and its
/// gradient, computed one pixel at a time without the max shift.
pub fn xent_oracle(scores: &ScoreVolume, target: &LabelMap) -> (f64, Tensor) {
    let (c, h, w) = (scores.classes(), scores.height(), scores.width());
    let count = target.as_slice().iter().filter(|&&l| l != IGNORE).count();
    let mut grad = Tensor::zeros([1, c, h, w]);
    let mut loss = 0.0;
    for y in 0..h {
        for x in 0..w {
            let t = target.get(y, x);
            if t == IGNORE {
                continue;
            }
            let z: f64 = (0..c).map(|k| scores.score(k, y, x).exp()).sum();
            loss -= (scores.score(t as usize, y, x).exp() / z).ln();
            for k in 0..c {
                let p = scores.score(k, y, x).exp() / z;
                *grad.at_mut(0, k, y, x) = (p - f64::from(k == t as usize)) / count as f64;
            }
        }
    }
    if count == 0 {
        return (0.0, grad);
    }
    (loss / count as f64, grad)
}

/// Half-pixel source coordinate of output index `o`, clamped at 0.
fn source(o: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn bilinear_oracle(x: &Tensor, oh: usize, ow: usize) -> Oracle {
    let s = x.shape();
    let mut value = Tensor::zeros([s.n, s.c, oh, ow]);
    let mut magnitude = Tensor::zeros([s.n, s.c, oh, ow]);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                let (y0, y1, fy) = source(y, s.h, oh);
                for xo in 0..ow {
                    let (x0, x1, fx) = source(xo, s.w, ow);
                    let terms = [
                        (1.0 - fy) * (1.0 - fx) * x.at(n, c, y0, x0),
                        (1.0 - fy) * fx * x.at(n, c, y0, x1),
                        fy * (1.0 - fx) * x.at(n, c, y1, x0),
                        fy * fx * x.at(n, c, y1, x1),
                    ];
                    *value.at_mut(n, c, y, xo) = terms.iter().sum();
                    *magnitude.at_mut(n, c, y, xo) = terms.iter().map(|t| t.abs()).sum();
                }
            }
        }
    }
    Oracle { value, magnitude }
}

/// Learned upsampling by `f`: replicate-pad by one pixel, transposed
/// convolution with a `2f x 2f` kernel and stride `f`, then the
/// `hf x wf` window starting at `3f/2`.
pub fn learned_upsample_oracle(x: &Tensor, p: &ConvParams, f: usize) -> Oracle {
    let s = x.shape();
    let padded = Tensor::from_fn([s.n, s.c, s.h + 2, s.w + 2], |n, c, y, xo| {
        x.at(
            n,
            c,
            y.saturating_sub(1).min(s.h - 1),
            xo.saturating_sub(1).min(s.w - 1),
        )
    });
    let full = conv_transpose_oracle(&padded, p);
    let off = 3 * f / 2;
    let crop = |t: &Tensor| {
        Tensor::from_fn([s.n, t.shape().c, s.h * f, s.w * f], |n, c, y, xo| {
            t.at(n, c, y + off, xo + off)
        })
    };
    Oracle {
        value: crop(&full.value),
        magnitude: crop(&full.magnitude),
    }
}

/// Central differences of `f` at every entry of `x`.
pub fn finite_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
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

/// Largest relative error between analytic and numeric gradients. Entries
/// more than six orders of magnitude below the largest numeric entry are
/// measured against that floor.
pub fn grad_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (scale * 1e-6).max(1e-300);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `sum(r * t)`, the scalar objective used for gradient checks.
pub fn dot(r: &Tensor, t: &Tensor) -> f64 {
    r.data().iter().zip(t.data()).map(|(a, b)| a * b).sum()
}

/// 4-connected components of the pixels carrying `label`.
pub fn components_of(labels: &LabelMap, label: u8) -> usize {
    let (h, w) = (labels.height(), labels.width());
    let mut seen = vec![false; h * w];
    let mut count = 0;
    for start in 0..h * w {
        if seen[start] || labels.as_slice()[start] != label {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut push = |q: usize| {
                if !seen[q] && labels.as_slice()[q] == label {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
        }
    }
    count
}

/// Exhaustive search over injections of prediction labels into
/// ground-truth labels or unused labels.
struct Injections<'a> {
    pred: &'a LabelMap,
    gt: &'a LabelMap,
    labels: Vec<u8>,
    targets: Vec<Option<u8>>,
    used: Vec<bool>,
    assign: Vec<Option<u8>>,
    best: usize,
}

impl Injections<'_> {
    fn hits(&self) -> usize {
        self.pred
            .as_slice()
            .iter()
            .zip(self.gt.as_slice())
            .filter(|(&p, &g)| {
                let i = self.labels.iter().position(|&q| q == p).unwrap();
                g != IGNORE && self.assign[i] == Some(g)
            })
            .count()
    }

    fn search(&mut self, i: usize) {
        if i == self.labels.len() {
            self.best = self.best.max(self.hits());
            return;
        }
        for t in 0..self.targets.len() {
            if self.used[t] {
                continue;
            }
            // Unused targets are interchangeable; try only the first free one.
            if self.targets[t].is_none()
                && (0..t).any(|u| self.targets[u].is_none() && !self.used[u])
            {
                continue;
            }
            self.used[t] = true;
            self.assign[i] = self.targets[t];
            self.search(i + 1);
            self.used[t] = false;
        }
    }
}

/// Pixel accuracy of `pred` against `gt` under the best one-to-one label
/// correspondence, found by trying every injection of prediction labels
/// into ground-truth labels (plus unused labels). Only for a handful of
/// labels.
pub fn best_permutation_accuracy(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let labels = pred.classes();
    let counted = gt.as_slice().iter().filter(|&&g| g != IGNORE).count();
    let mut targets: Vec<Option<u8>> = gt
        .classes()
        .into_iter()
        .filter(|&g| g != IGNORE)
        .map(Some)
        .collect();
    targets.extend(std::iter::repeat_n(None, labels.len()));
    let mut s = Injections {
        pred,
        gt,
        used: vec![false; targets.len()],
        assign: vec![None; labels.len()],
        labels,
        targets,
        best: 0,
    };
    s.search(0);
    if counted == 0 {
        0.0
    } else {
        100.0 * s.best as f64 / counted as f64
    }
}

/// Global and local consistency errors from the pixel-wise definition:
/// for every pixel, the fraction of its region in one segmentation that
/// falls outside its region in the other.
pub fn consistency_oracle(pred: &LabelMap, gt: &LabelMap) -> (f64, f64) {
    let pix: Vec<usize> = (0..gt.len())
        .filter(|&p| gt.as_slice()[p] != IGNORE)
        .collect();
    if pix.is_empty() {
        return (0.0, 0.0);
    }
    let (a, b) = (pred.as_slice(), gt.as_slice());
    let (mut e_ab, mut e_ba, mut local) = (0.0, 0.0, 0.0);
    for &p in &pix {
        let ra: Vec<usize> = pix.iter().copied().filter(|&q| a[q] == a[p]).collect();
        let rb: Vec<usize> = pix.iter().copied().filter(|&q| b[q] == b[p]).collect();
        let both = ra.iter().filter(|&&q| b[q] == b[p]).count() as f64;
        let lre_ab = (ra.len() as f64 - both) / ra.len() as f64;
        let lre_ba = (rb.len() as f64 - both) / rb.len() as f64;
        e_ab += lre_ab;
        e_ba += lre_ba;
        local += lre_ab.min(lre_ba);
    }
    let n = pix.len() as f64;
    (100.0 * e_ab.min(e_ba) / n, 100.0 * local / n)
}

/// Region scores `(CS, OS, US, ME, NE)` straight from pixel sets.
pub fn region_oracle(pred: &LabelMap, gt: &LabelMap, t: f64) -> [f64; 5] {
    let pix: Vec<usize> = (0..gt.len())
        .filter(|&p| gt.as_slice()[p] != IGNORE)
        .collect();
    let (a, b) = (pred.as_slice(), gt.as_slice());
    let mut gs: Vec<u8> = pix.iter().map(|&p| b[p]).collect();
    gs.sort_unstable();
    gs.dedup();
    let mut ps: Vec<u8> = pix.iter().map(|&p| a[p]).collect();
    ps.sort_unstable();
    ps.dedup();
    if gs.is_empty() {
        return [0.0; 5];
    }
    let o = |p: u8, g: u8| pix.iter().filter(|&&q| a[q] == p && b[q] == g).count() as f64;
    let gsize = |g: u8| pix.iter().filter(|&&q| b[q] == g).count() as f64;
    let psize = |p: u8| pix.iter().filter(|&&q| a[q] == p).count() as f64;
    let correct =
        |p: u8, g: u8| o(p, g) > 0.0 && o(p, g) >= t * gsize(g) && o(p, g) >= t * psize(p);
    let g_cs = |g: u8| ps.iter().any(|&p| correct(p, g));
    let p_cs = |p: u8| gs.iter().any(|&g| correct(p, g));
    let g_parts = |g: u8| -> Vec<u8> {
        ps.iter()
            .copied()
            .filter(|&p| o(p, g) > 0.0 && o(p, g) >= (1.0 - t) * gsize(g))
            .collect()
    };
    let p_parts = |p: u8| -> Vec<u8> {
        gs.iter()
            .copied()
            .filter(|&g| o(p, g) > 0.0 && o(p, g) >= (1.0 - t) * psize(p))
            .collect()
    };
    let g_os = |g: u8| !g_cs(g) && g_parts(g).len() >= 2;
    let p_us = |p: u8| !p_cs(p) && p_parts(p).len() >= 2;
    let p_in_os = |p: u8| gs.iter().any(|&g| g_os(g) && g_parts(g).contains(&p));
    let g_in_us = |g: u8| ps.iter().any(|&p| p_us(p) && p_parts(p).contains(&g));
    let pct = |n: usize, d: usize| 100.0 * n as f64 / d as f64;
    [
        pct(gs.iter().filter(|&&g| g_cs(g)).count(), gs.len()),
        pct(gs.iter().filter(|&&g| g_os(g)).count(), gs.len()),
        pct(ps.iter().filter(|&&p| p_us(p)).count(), ps.len()),
        pct(
            gs.iter()
                .filter(|&&g| !g_cs(g) && !g_os(g) && !g_in_us(g))
                .count(),
            gs.len(),
        ),
        pct(
            ps.iter()
                .filter(|&&p| !p_cs(p) && !p_in_os(p) && !p_us(p))
                .count(),
            ps.len(),
        ),
    ]
}

/// Random label map with `k` labels in blocky regions of side `block`.
pub fn blocky_labels(h: usize, w: usize, k: u8, block: usize, rng: &mut impl Rng) -> LabelMap {
    let bw = w.div_ceil(block);
    let cells: Vec<u8> = (0..h.div_ceil(block) * bw)
        .map(|_| rng.gen_range(0..k))
        .collect();
    LabelMap::from_fn(h, w, |y, x| cells[(y / block) * bw + x / block])
}

/// Score volume drawn either pixel-independently or as a smooth field
/// (a coarse grid bilinearly resized), so both fragmented and blobby
/// argmax maps are exercised.
pub fn random_scores(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> ScoreVolume {
    if rng.gen_bool(0.3) {
        return ScoreVolume::new(random_tensor([1, c, h, w], rng)).unwrap();
    }
    let gh = rng.gen_range(1..=h.clamp(1, 6));
    let gw = rng.gen_range(1..=w.clamp(1, 6));
    let coarse = random_tensor([1, c, gh, gw], rng);
    let mut t = fcnt_core::ops::resize_bilinear(&coarse, h, w).unwrap();
    let jitter = rng.gen_range(0.0..0.3);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v += jitter * rng.gen_range(-1.0..1.0));
    ScoreVolume::new(t).unwrap()
}
