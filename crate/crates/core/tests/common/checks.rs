//! Randomized checks shared by the integration tests and the acceptance
//! suite. Each returns measurements; callers decide the pass threshold.

#![allow(dead_code)]

use fcnt_core::label::{LabelMap, ScoreVolume, IGNORE};
use fcnt_core::metrics::{
    consistency_measures, match_labels, pixel_measures, region_measures, score_image, Matching,
};
use fcnt_core::model::Gradients;
use fcnt_core::ops::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, resize_bilinear,
    resize_bilinear_backward, softmax_xent_pixelwise, upsample, upsample_backward, ConvParams,
    UpsampleMode,
};
use fcnt_core::predict_labels;
use fcnt_core::refine::{largest_patches_fill, refine, MAX_ITERATIONS};
use fcnt_core::train::train_step_gradients;
use fcnt_core::{build_fcnt, NetworkSpec, NetworkState, Tensor};
use rand::Rng;

use super::*;

/// Worst error seen for one named check.
#[derive(Clone, Debug)]
pub struct Measured {
    pub name: &'static str,
    pub worst: f64,
}

fn record(out: &mut Vec<Measured>, name: &'static str, err: f64) {
    match out.iter_mut().find(|m| m.name == name) {
        Some(m) => m.worst = m.worst.max(err),
        None => out.push(Measured { name, worst: err }),
    }
}

fn random_conv(
    rng: &mut impl Rng,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> ConvParams {
    let w = random_tensor([out_c, in_c, k, k], rng);
    let b = (0..out_c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConvParams::new(w, b, stride, pad).unwrap()
}

fn random_transposed(
    rng: &mut impl Rng,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> ConvParams {
    let w = random_tensor([in_c, out_c, k, k], rng);
    let b = (0..out_c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConvParams::transposed(w, b, stride, pad).unwrap()
}

fn random_target(h: usize, w: usize, c: usize, rng: &mut impl Rng) -> LabelMap {
    LabelMap::from_fn(h, w, |_, _| {
        if rng.gen_bool(0.15) {
            IGNORE
        } else {
            rng.gen_range(0..c as u8)
        }
    })
}

/// Compares every kernel with its nested-loop oracle on `cases` random
/// instances per kernel.
pub fn kernel_oracles(cases: usize, seed: u64) -> Vec<Measured> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for _ in 0..cases {
        // Convolution.
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (stride, pad) = (rng.gen_range(1..4), rng.gen_range(0..3));
        let k = rng.gen_range(1..=(h.min(w) + 2 * pad).min(5));
        let x = random_tensor([rng.gen_range(1..3), ci, h, w], &mut rng);
        let p = random_conv(&mut rng, ci, co, k, stride, pad);
        record(
            &mut out,
            "conv2d",
            oracle_err(&conv2d_forward(&x, &p).unwrap(), &conv_oracle(&x, &p)),
        );

        // Transposed convolution.
        let k = rng.gen_range(1..6);
        let pad = rng.gen_range(0..=(k - 1) / 2);
        let x = random_tensor([1, ci, h, w], &mut rng);
        let p = random_transposed(&mut rng, ci, co, k, stride, pad);
        record(
            &mut out,
            "conv_transpose2d",
            oracle_err(
                &conv_transpose2d_forward(&x, &p).unwrap(),
                &conv_transpose_oracle(&x, &p),
            ),
        );

        // Max pooling: values and winning indices must agree exactly.
        let x = random_tensor([1, ci, h, w], &mut rng);
        let mut x = x;
        if rng.gen_bool(0.3) {
            // Quantize to force ties.
            x.data_mut()
                .iter_mut()
                .for_each(|v| *v = (*v * 2.0).round());
        }
        let (got, idx) = maxpool_forward(&x);
        let (want, want_idx) = pool_oracle(&x);
        let pool_err = if got.data() == want.data() && idx.indices() == want_idx.as_slice() {
            0.0
        } else {
            1.0
        };
        record(&mut out, "maxpool", pool_err);

        // Softmax cross-entropy.
        let c = rng.gen_range(2..7);
        let scores = ScoreVolume::new(random_tensor([1, c, h, w], &mut rng)).unwrap();
        let mut t = scores.tensor().clone();
        t.scale(3.0);
        let scores = ScoreVolume::new(t).unwrap();
        let target = random_target(h, w, c, &mut rng);
        let got = softmax_xent_pixelwise(&scores, &target).unwrap();
        let (loss, grad) = xent_oracle(&scores, &target);
        let loss_err = if got.loss == loss {
            0.0
        } else {
            (got.loss - loss).abs() / loss.abs()
        };
        record(&mut out, "softmax_xent loss", loss_err);
        let mag = Tensor::from_fn(grad.shape(), |n, k, y, x| {
            let onehot = f64::from(target.get(y, x) as usize == k);
            grad.at(n, k, y, x).abs() + 2.0 * onehot / got.counted.max(1) as f64
        });
        let grad_oracle = Oracle {
            value: grad,
            magnitude: mag,
        };
        record(
            &mut out,
            "softmax_xent grad",
            oracle_err(got.grad.tensor(), &grad_oracle),
        );

        // Bilinear resize, up or down.
        let (oh, ow) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let x = random_tensor([1, ci, h, w], &mut rng);
        record(
            &mut out,
            "bilinear resize",
            oracle_err(
                &resize_bilinear(&x, oh, ow).unwrap(),
                &bilinear_oracle(&x, oh, ow),
            ),
        );

        // Learned upsampling.
        let f = rng.gen_range(1..5);
        let p = random_transposed(&mut rng, ci, ci, 2 * f, f, 0);
        let x = random_tensor([1, ci, h.min(8), w.min(8)], &mut rng);
        record(
            &mut out,
            "learned upsample",
            oracle_err(
                &upsample(&x, f, UpsampleMode::Learned(&p)).unwrap(),
                &learned_upsample_oracle(&x, &p, f),
            ),
        );
    }
    out
}

fn params_flat(p: &ConvParams) -> Vec<f64> {
    p.weight.data().iter().chain(&p.bias).copied().collect()
}

fn set_params(p: &mut ConvParams, v: &[f64]) {
    let n = p.weight.data().len();
    p.weight.data_mut().copy_from_slice(&v[..n]);
    p.bias.copy_from_slice(&v[n..]);
}

/// Finite-difference checks of every differentiable op on `cases` random
/// instances each, with respect to inputs and parameters.
pub fn op_gradients(cases: usize, seed: u64) -> Vec<Measured> {
    let mut rng = rng(seed);
    let h = 1e-5;
    let mut out = Vec::new();
    for _ in 0..cases {
        let (ih, iw) = (rng.gen_range(2..7), rng.gen_range(2..7));
        let (ci, co) = (rng.gen_range(1..3), rng.gen_range(1..3));

        // Convolution.
        let (stride, pad, k) = (
            rng.gen_range(1..3),
            rng.gen_range(0..2),
            rng.gen_range(1..4),
        );
        let k = k.min(ih.min(iw) + 2 * pad);
        let x = random_tensor([1, ci, ih, iw], &mut rng);
        let p = random_conv(&mut rng, ci, co, k, stride, pad);
        let y = conv2d_forward(&x, &p).unwrap();
        let r = random_tensor(y.shape().to_array(), &mut rng);
        let (gx, gp) = conv2d_backward(&x, &p, &r).unwrap();
        let num = finite_diff(x.data(), h, |v| {
            dot(
                &r,
                &conv2d_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &p).unwrap(),
            )
        });
        let mut err = grad_err(gx.data(), &num);
        let num = finite_diff(&params_flat(&p), h, |v| {
            let mut q = p.clone();
            set_params(&mut q, v);
            dot(&r, &conv2d_forward(&x, &q).unwrap())
        });
        let ana: Vec<f64> = gp.weight.data().iter().chain(&gp.bias).copied().collect();
        err = err.max(grad_err(&ana, &num));
        record(&mut out, "conv2d", err);

        // Transposed convolution.
        let k = rng.gen_range(1..5);
        let pad = rng.gen_range(0..=(k - 1) / 2);
        let p = random_transposed(&mut rng, ci, co, k, stride, pad);
        let y = conv_transpose2d_forward(&x, &p).unwrap();
        let r = random_tensor(y.shape().to_array(), &mut rng);
        let (gx, gp) = conv_transpose2d_backward(&x, &p, &r).unwrap();
        let num = finite_diff(x.data(), h, |v| {
            dot(
                &r,
                &conv_transpose2d_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &p)
                    .unwrap(),
            )
        });
        let mut err = grad_err(gx.data(), &num);
        let num = finite_diff(&params_flat(&p), h, |v| {
            let mut q = p.clone();
            set_params(&mut q, v);
            dot(&r, &conv_transpose2d_forward(&x, &q).unwrap())
        });
        let ana: Vec<f64> = gp.weight.data().iter().chain(&gp.bias).copied().collect();
        err = err.max(grad_err(&ana, &num));
        record(&mut out, "conv_transpose2d", err);

        // Max pooling, away from ties.
        let x = random_tensor([1, ci, ih, iw], &mut rng);
        let (y, idx) = maxpool_forward(&x);
        let r = random_tensor(y.shape().to_array(), &mut rng);
        let gx = maxpool_backward(&idx, &r).unwrap();
        let num = finite_diff(x.data(), h, |v| {
            dot(
                &r,
                &maxpool_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).0,
            )
        });
        record(&mut out, "maxpool", grad_err(gx.data(), &num));

        // ReLU, away from the kink.
        let mut x = random_tensor([1, ci, ih, iw], &mut rng);
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 1e-3 {
                *v = 0.5
            }
        });
        let y = relu_forward(&x);
        let r = random_tensor(y.shape().to_array(), &mut rng);
        let gx = relu_backward(&y, &r).unwrap();
        let num = finite_diff(x.data(), h, |v| {
            dot(
                &r,
                &relu_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()),
            )
        });
        record(&mut out, "relu", grad_err(gx.data(), &num));

        // Softmax cross-entropy.
        let c = rng.gen_range(2..5);
        let s = random_tensor([1, c, ih, iw], &mut rng);
        let target = random_target(ih, iw, c, &mut rng);
        if target.count_ignored() < target.len() {
            let got =
                softmax_xent_pixelwise(&ScoreVolume::new(s.clone()).unwrap(), &target).unwrap();
            let num = finite_diff(s.data(), h, |v| {
                let sv =
                    ScoreVolume::new(Tensor::from_vec(s.shape(), v.to_vec()).unwrap()).unwrap();
                softmax_xent_pixelwise(&sv, &target).unwrap().loss
            });
            record(
                &mut out,
                "softmax_xent",
                grad_err(got.grad.tensor().data(), &num),
            );
        }

        // Bilinear resize.
        let (oh, ow) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let x = random_tensor([1, ci, ih, iw], &mut rng);
        let r = random_tensor([1, ci, oh, ow], &mut rng);
        let gx = resize_bilinear_backward(x.shape(), &r).unwrap();
        let num = finite_diff(x.data(), h, |v| {
            dot(
                &r,
                &resize_bilinear(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), oh, ow)
                    .unwrap(),
            )
        });
        record(&mut out, "bilinear resize", grad_err(gx.data(), &num));

        // Learned upsampling.
        let f = rng.gen_range(1..4);
        let p = random_transposed(&mut rng, ci, ci, 2 * f, f, 0);
        let y = upsample(&x, f, UpsampleMode::Learned(&p)).unwrap();
        let r = random_tensor(y.shape().to_array(), &mut rng);
        let (gx, gp) = upsample_backward(&x, f, UpsampleMode::Learned(&p), &r).unwrap();
        let num = finite_diff(x.data(), h, |v| {
            let xv = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
            dot(&r, &upsample(&xv, f, UpsampleMode::Learned(&p)).unwrap())
        });
        let mut err = grad_err(gx.data(), &num);
        let gp = gp.expect("learned upsampling has parameter gradients");
        let num = finite_diff(&params_flat(&p), h, |v| {
            let mut q = p.clone();
            set_params(&mut q, v);
            dot(&r, &upsample(&x, f, UpsampleMode::Learned(&q)).unwrap())
        });
        let ana: Vec<f64> = gp.weight.data().iter().chain(&gp.bias).copied().collect();
        err = err.max(grad_err(&ana, &num));
        record(&mut out, "learned upsample", err);
    }
    out
}

fn flat_grads(g: &Gradients) -> Vec<f64> {
    g.layers()
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(&l.bias).copied())
        .collect()
}

fn flat_params(s: &NetworkState) -> Vec<f64> {
    s.layers()
        .iter()
        .flat_map(|l| params_flat(&l.params))
        .collect()
}

fn load_params(s: &mut NetworkState, v: &[f64]) {
    let mut at = 0;
    for l in s.layers_mut() {
        let n = l.params.weight.data().len() + l.params.bias.len();
        set_params(&mut l.params, &v[at..at + n]);
        at += n;
    }
}

/// Finite-difference check of the whole network: the mean pixel-wise
/// cross-entropy of a random 32x32 image against random labels, with
/// respect to every parameter of a reduced two-class network. The biases
/// are randomized so no parameter sits at a symmetric point.
pub fn model_gradient(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut state = build_fcnt(&NetworkSpec::reduced(2), seed).unwrap();
    for l in state.layers_mut() {
        l.params
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.1..0.1));
    }
    let image = Tensor::from_fn([1, 1, 32, 32], |_, _, _, _| rng.gen_range(0.0..1.0));
    let labels = blocky_labels(32, 32, 2, 8, &mut rng);
    let (_, grads) = train_step_gradients(&state, &image, &labels).unwrap();
    let base = flat_params(&state);
    let mut probe = state.clone();
    let num = finite_diff(&base, 1e-5, |v| {
        load_params(&mut probe, v);
        train_step_gradients(&probe, &image, &labels).unwrap().0
    });
    grad_err(&flat_grads(&grads), &num)
}

/// Outcome of the refinement fuzzer.
#[derive(Debug, Default)]
pub struct RefineFuzz {
    pub cases: usize,
    pub converged: usize,
    pub forced: usize,
    pub violations: Vec<String>,
}

/// Refines `cases` random score volumes and checks the contract: the loop
/// stays within its cap, every output class forms one 4-connected patch,
/// the output uses exactly the selected classes, and pixels of the selected
/// largest patches keep their argmax label.
pub fn refine_fuzz(cases: usize, seed: u64) -> RefineFuzz {
    let mut rng = rng(seed);
    let mut r = RefineFuzz {
        cases,
        ..RefineFuzz::default()
    };
    for case in 0..cases {
        let c = rng.gen_range(2..=6);
        let (h, w) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
        let n = rng.gen_range(1..=c);
        let scores = random_scores(c, h, w, &mut rng);
        let rep = refine(&scores, n).unwrap();
        let mut bad = |msg: String| {
            r.violations
                .push(format!("case {case} ({c}x{h}x{w}, N={n}): {msg}"))
        };
        if rep.iterations > MAX_ITERATIONS {
            bad(format!("{} iterations", rep.iterations));
        }
        let argmax = predict_labels(&scores);
        let fill = largest_patches_fill(&argmax, n);
        let classes = rep.labels.classes();
        let mut selected = fill.selected.clone();
        selected.sort_unstable();
        if classes != selected {
            bad(format!("classes {classes:?}, selected {selected:?}"));
        }
        for &k in &classes {
            let parts = components_of(&rep.labels, k);
            if parts != 1 {
                bad(format!("class {k} has {parts} patches"));
            }
        }
        let d = fcnt_core::patches::connected_components(&argmax);
        for (k, p) in d.largest_per_class().into_iter().enumerate() {
            let Some(p) = p else { continue };
            if !fill.selected.contains(&(k as u8)) {
                continue;
            }
            if d.patches()[p]
                .pixels
                .iter()
                .any(|&q| rep.labels.as_slice()[q] != k as u8)
            {
                bad(format!("selected patch of class {k} was relabeled"));
            }
        }
        if rep.forced() {
            r.forced += 1;
        } else {
            r.converged += 1;
        }
    }
    r
}

/// Results of the metric invariants over random pairs.
#[derive(Debug, Default)]
pub struct MetricFuzz {
    pub pairs: usize,
    pub violations: Vec<String>,
    /// Largest deviation of region and consistency measures from the
    /// pixel-set oracles.
    pub oracle_err: f64,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Splits every region of `gt` into pieces along a random grid, which
/// yields a segmentation that refines `gt`.
fn refinement_of(gt: &LabelMap, rng: &mut impl Rng) -> LabelMap {
    let cell = rng.gen_range(2..6);
    let bw = gt.width().div_ceil(cell);
    LabelMap::from_fn(gt.height(), gt.width(), |y, x| {
        let piece = ((y / cell) * bw + x / cell) % 50;
        match gt.get(y, x) {
            IGNORE => 251,
            g => (g as usize * 50 + piece) as u8,
        }
    })
}

/// Checks the metric invariants on `pairs` random label-map pairs.
pub fn metric_fuzz(pairs: usize, seed: u64) -> MetricFuzz {
    let mut rng = rng(seed);
    let mut r = MetricFuzz {
        pairs,
        ..MetricFuzz::default()
    };
    for case in 0..pairs {
        let (h, w) = (rng.gen_range(2..20), rng.gen_range(2..20));
        let kg = rng.gen_range(1..=5);
        let kp = rng.gen_range(1..=5);
        let mut gt = blocky_labels(h, w, kg, rng.gen_range(1..6), &mut rng);
        if rng.gen_bool(0.2) {
            gt.set(0, 0, IGNORE);
        }
        let pred = blocky_labels(h, w, kp, rng.gen_range(1..6), &mut rng);
        let mut bad = |msg: String| r.violations.push(format!("pair {case} ({h}x{w}): {msg}"));
        let t = rng.gen_range(0.5..=1.0);

        // Identical maps.
        let same = score_image(&gt, &gt, t).unwrap();
        if gt.count_ignored() < gt.len()
            && (same.co != 100.0
                || same.ca != 100.0
                || same.cs != 100.0
                || same.gce != 0.0
                || same.lce != 0.0)
        {
            bad(format!("identical maps scored {same:?}"));
        }
        if same.os != 0.0 || same.us != 0.0 || same.me != 0.0 || same.ne != 0.0 {
            bad(format!("identical maps have error rates {same:?}"));
        }

        // Consistency errors vanish when one map refines the other.
        let fine = refinement_of(&gt, &mut rng);
        let (g1, l1) = consistency_measures(&fine, &gt);
        let (g2, l2) = consistency_measures(&gt, &fine);
        if g1.abs() > 1e-12 || l1.abs() > 1e-12 || g2.abs() > 1e-12 || l2.abs() > 1e-12 {
            bad(format!("refinement scored GCE {g1}/{g2}, LCE {l1}/{l2}"));
        }

        // GCE >= LCE, and both match the pixel-wise definition.
        let (gce, lce) = consistency_measures(&pred, &gt);
        if gce < lce - 1e-12 {
            bad(format!("GCE {gce} < LCE {lce}"));
        }
        let (og, ol) = consistency_oracle(&pred, &gt);
        r.oracle_err = r.oracle_err.max((gce - og).abs()).max((lce - ol).abs());
        if !close(gce, og) || !close(lce, ol) {
            bad(format!("consistency {gce}/{lce} vs oracle {og}/{ol}"));
        }

        // Region measures against the overlap oracle.
        let rs = region_measures(&pred, &gt, t);
        let got = [rs.cs, rs.os, rs.us, rs.me, rs.ne];
        let want = region_oracle(&pred, &gt, t);
        for (name, (a, b)) in ["CS", "OS", "US", "ME", "NE"]
            .iter()
            .zip(got.iter().zip(&want))
        {
            r.oracle_err = r.oracle_err.max((a - b).abs());
            if !close(*a, *b) {
                bad(format!("{name} {a} vs oracle {b} at threshold {t}"));
            }
        }

        // Hungarian matching reaches the best permutation accuracy, never
        // below identity, and is invariant to relabeling the prediction.
        let matched = match_labels(&pred, &gt, Matching::Hungarian).apply(&pred);
        let (co_h, _) = pixel_measures(&matched, &gt);
        let (co_id, _) = pixel_measures(&pred, &gt);
        let best = best_permutation_accuracy(&pred, &gt);
        r.oracle_err = r.oracle_err.max((co_h - best).abs());
        if !close(co_h, best) {
            bad(format!("hungarian CO {co_h} vs permutation oracle {best}"));
        }
        if co_h < co_id - 1e-12 {
            bad(format!("hungarian CO {co_h} below identity {co_id}"));
        }
        let shift = rng.gen_range(1..200u8);
        let renamed = LabelMap::from_fn(h, w, |y, x| pred.get(y, x).wrapping_add(shift) % 250);
        let rematched = match_labels(&renamed, &gt, Matching::Hungarian).apply(&renamed);
        let (co_r, _) = pixel_measures(&rematched, &gt);
        if !close(co_r, co_h) {
            bad(format!("relabeled prediction changed CO {co_h} -> {co_r}"));
        }

        // At threshold 1 only exact region matches count as correct.
        let exact = score_image(&pred, &gt, 1.0).unwrap();
        let want_cs = region_oracle(&pred, &gt, 1.0)[0];
        if !close(exact.cs, want_cs) {
            bad(format!("CS at threshold 1 is {} vs {want_cs}", exact.cs));
        }
    }
    r
}
