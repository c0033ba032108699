//! Unsupervised training labels for a test image.
//!
//! [`preseg_from_network`] clusters the per-pixel class scores of a
//! pre-trained network; [`load_external_preseg`] accepts a label map made
//! by any other method. [`preseg_clean`] then reduces either to the pixels
//! worth training on.

mod kmeans;

use std::path::Path;

pub use kmeans::{kmeans, KMeansConfig, KMeansResult};

use crate::error::{Error, Result};
use crate::label::{LabelMap, IGNORE};
use crate::model::NetworkState;
use crate::ops::resize_bilinear;
use crate::patches::{connected_components, enclosed_holes};
use crate::tensor::Tensor;
use crate::train::infer_full;

/// Feature space for clustering network outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Features {
    /// Raw class scores.
    #[default]
    Raw,
    /// Per-pixel softmax probabilities.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PresegConfig {
    /// Number of clusters (known in advance).
    pub k: usize,
    pub downsample_factor: usize,
    /// Chebyshev radius of the ignore band around class boundaries.
    pub border_dilation_radius: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub features: Features,
    pub seed: u64,
}

impl PresegConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        PresegConfig {
            k,
            downsample_factor: 4,
            border_dilation_radius: 3,
            kmeans_restarts: 5,
            kmeans_max_iters: 100,
            features: Features::Raw,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "pre-segmentation needs k >= 2, got {}",
                self.k
            )));
        }
        if self.downsample_factor == 0 {
            return Err(Error::InvalidArgument(
                "downsample factor must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Downsamples `image` by `factor` (bilinear), clusters the network's
/// per-pixel score vectors into `k` groups and upsamples the cluster map
/// back to the image extents by nearest neighbour.
pub fn preseg_from_network(
    state: &NetworkState,
    image: &Tensor,
    config: &PresegConfig,
) -> Result<LabelMap> {
    config.validate()?;
    let s = image.shape();
    let f = config.downsample_factor;
    let (sh, sw) = (s.h.div_ceil(f), s.w.div_ceil(f));
    let small = if f == 1 {
        image.clone()
    } else {
        resize_bilinear(image, sh, sw)?
    };
    let (scores, _) = infer_full(state, &small)?;
    let c = scores.classes();
    let plane = sh * sw;
    let data = scores.tensor().data();
    let points: Vec<Vec<f64>> = (0..plane)
        .map(|p| {
            let v: Vec<f64> = (0..c).map(|k| data[k * plane + p]).collect();
            match config.features {
                Features::Raw => v,
                Features::Softmax => softmax(&v),
            }
        })
        .collect();
    let km = kmeans(
        &points,
        &KMeansConfig {
            k: config.k,
            restarts: config.kmeans_restarts,
            max_iters: config.kmeans_max_iters,
            seed: config.seed,
        },
    )?;
    Ok(LabelMap::from_fn(s.h, s.w, |y, x| {
        let sy = (y * sh / s.h).min(sh - 1);
        let sx = (x * sw / s.w).min(sw - 1);
        km.assignments[sy * sw + sx] as u8
    }))
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Result of [`preseg_clean`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CleanedPreseg {
    pub labels: LabelMap,
    /// Classes present in the input with no pixel left after cleaning.
    pub dropped: Vec<u8>,
}

impl CleanedPreseg {
    /// Classes that survived cleaning, ascending.
    pub fn classes(&self) -> Vec<u8> {
        self.labels.classes()
    }
}

/// Square dilation of `mask` by Chebyshev radius `r` (separable max filter).
fn dilate(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = (lo..=hi).any(|xx| mask[y * w + xx]);
        }
    }
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    out
}

/// Keeps the trainable part of a pre-segmentation:
///
/// 1. pixels within `radius` (Chebyshev) of a pixel of another class
///    become ignore;
/// 2. of what remains, each class keeps its largest 4-connected region,
///    with enclosed holes filled (holes holding another class's region are
///    left alone); everything else becomes ignore.
///
/// The result is a fixpoint: cleaning it again changes nothing.
pub fn preseg_clean(labels: &LabelMap, radius: usize) -> Result<CleanedPreseg> {
    let present = labels.classes();
    if present.len() < 2 {
        return Err(Error::SingleClass(present.len()));
    }
    let (h, w) = (labels.height(), labels.width());
    let lab = labels.as_slice();
    let mut banded = labels.clone();
    for &c in &present {
        let near = dilate(
            &lab.iter().map(|&l| l == c).collect::<Vec<_>>(),
            h,
            w,
            radius,
        );
        for (p, out) in banded.as_mut_slice().iter_mut().enumerate() {
            if near[p] && lab[p] != c && lab[p] != IGNORE {
                *out = IGNORE;
            }
        }
    }
    let d = connected_components(&banded);
    let largest = d.largest_per_class();
    let mut out = vec![IGNORE; lab.len()];
    for &c in &present {
        if let Some(i) = largest[c as usize] {
            for &p in &d.patches()[i].pixels {
                out[p] = c;
            }
        }
    }
    let kept = out.clone();
    for &c in &present {
        if largest[c as usize].is_none() {
            continue;
        }
        let region: Vec<bool> = kept.iter().map(|&l| l == c).collect();
        let protected: Vec<bool> = kept.iter().map(|&l| l != c && l != IGNORE).collect();
        for p in enclosed_holes(&region, &protected, h, w) {
            out[p] = c;
        }
    }
    let dropped = present
        .into_iter()
        .filter(|&c| largest[c as usize].is_none())
        .collect();
    Ok(CleanedPreseg {
        labels: LabelMap::new(h, w, out)?,
        dropped,
    })
}

/// Reads an externally produced pre-segmentation and checks it against the
/// image extents.
pub fn load_external_preseg(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
) -> Result<LabelMap> {
    crate::imageio::read_labels_for(path, height, width)
}
