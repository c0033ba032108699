//! Test mosaics: one texture region per class over a partition of the image.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::texture::{gen_texture, TextureSpec};
use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::patches::neighbors4;
use crate::seed;
use crate::tensor::Tensor;

/// Region counts allowed without opting out of the usual protocol.
pub const REGION_RANGE: std::ops::RangeInclusive<usize> = 2..=5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    VerticalStrips,
    HorizontalStrips,
    /// Warped Voronoi cells grown from random sites; every cell is
    /// 4-connected.
    Voronoi,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::VerticalStrips => "vertical",
            Layout::HorizontalStrips => "horizontal",
            Layout::Voronoi => "voronoi",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical" => Ok(Layout::VerticalStrips),
            "horizontal" => Ok(Layout::HorizontalStrips),
            "voronoi" => Ok(Layout::Voronoi),
            _ => Err(Error::InvalidArgument(format!("unknown layout {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MosaicSpec {
    pub height: usize,
    pub width: usize,
    pub layout: Layout,
    /// Class of each region, all distinct.
    pub classes: Vec<u8>,
    pub seed: u64,
}

impl MosaicSpec {
    pub fn region_count(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self, allow_nonpaper: bool) -> Result<()> {
        let k = self.classes.len();
        if !allow_nonpaper && !REGION_RANGE.contains(&k) {
            return Err(Error::InvalidArgument(format!(
                "mosaics have 2 to 5 regions, got {k} (pass allow_nonpaper to override)"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("mosaic without regions".into()));
        }
        let mut seen = [false; 256];
        for &c in &self.classes {
            if std::mem::replace(&mut seen[c as usize], true) {
                return Err(Error::InvalidArgument(format!(
                    "class {c} used by two mosaic regions"
                )));
            }
        }
        if self.layout == Layout::VerticalStrips && k > self.width
            || self.layout == Layout::HorizontalStrips && k > self.height
        {
            return Err(Error::InvalidArgument("more strips than pixels".into()));
        }
        Ok(())
    }
}

/// Region index of every pixel.
pub fn partition(spec: &MosaicSpec) -> Vec<u8> {
    let (h, w, k) = (spec.height, spec.width, spec.classes.len());
    match spec.layout {
        Layout::VerticalStrips => (0..h * w).map(|p| ((p % w) * k / w) as u8).collect(),
        Layout::HorizontalStrips => (0..h * w).map(|p| ((p / w) * k / h) as u8).collect(),
        Layout::Voronoi => voronoi(h, w, k, spec.seed),
    }
}

fn voronoi(h: usize, w: usize, k: usize, master: u64) -> Vec<u8> {
    let mut rng = seed::rng(master, "voronoi", 0);
    // Sites keep a minimum spacing so no cell is tiny; relax it if needed.
    let mut spacing = 0.7 * ((h * w) as f64 / k as f64).sqrt();
    let mut sites: Vec<(f64, f64)> = Vec::with_capacity(k);
    let mut attempts = 0;
    while sites.len() < k {
        let s = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        if sites
            .iter()
            .all(|t| (t.0 - s.0).hypot(t.1 - s.1) >= spacing)
        {
            sites.push(s);
        }
        attempts += 1;
        if attempts % 200 == 0 {
            spacing *= 0.9;
        }
    }
    let side = h.min(w) as f64;
    let amp = 0.06 * side;
    let wave = 2.0 * PI / (0.6 * side);
    let (p1, p2) = (rng.gen::<f64>() * 2.0 * PI, rng.gen::<f64>() * 2.0 * PI);
    let warp = |y: usize, x: usize| {
        let (yf, xf) = (y as f64, x as f64);
        (
            yf + amp * (wave * xf + p1).sin(),
            xf + amp * (wave * yf + p2).sin(),
        )
    };
    let dist = |p: usize, r: usize| {
        let (y, x) = warp(p / w, p % w);
        let (sy, sx) = sites[r];
        (y - sy).hypot(x - sx)
    };
    // Grow all cells at once in order of warped distance to their site.
    let mut region = vec![u8::MAX; h * w];
    let mut heap = BinaryHeap::new();
    for (r, &(sy, sx)) in sites.iter().enumerate() {
        let p = (sy as usize).min(h - 1) * w + (sx as usize).min(w - 1);
        heap.push(Reverse((0u64, p, r)));
    }
    while let Some(Reverse((_, p, r))) = heap.pop() {
        if region[p] != u8::MAX {
            continue;
        }
        region[p] = r as u8;
        for q in neighbors4(p, h, w) {
            if region[q] == u8::MAX {
                // Non-negative floats order like their bit patterns.
                heap.push(Reverse((dist(q, r).to_bits(), q, r)));
            }
        }
    }
    region
}

/// Builds the mosaic image and its ground truth (labels are class ids).
/// Region `r` is cut from a full-size texture of its class generated with
/// an instance seed derived from the mosaic seed.
pub fn compose_mosaic(spec: &MosaicSpec, bank: &[TextureSpec]) -> Result<(Tensor, LabelMap)> {
    spec.validate(true)?;
    for &c in &spec.classes {
        if c as usize >= bank.len() {
            return Err(Error::InvalidArgument(format!(
                "class {c} is not in the {}-class bank",
                bank.len()
            )));
        }
    }
    let (h, w) = (spec.height, spec.width);
    let parts = partition(spec);
    let mut image = Tensor::zeros([1, 1, h, w]);
    for (r, &c) in spec.classes.iter().enumerate() {
        let tex = gen_texture(
            &bank[c as usize],
            h,
            w,
            seed::derive(spec.seed, "region", r as u64),
        )?;
        let src = tex.data();
        let dst = image.data_mut();
        for p in 0..h * w {
            if parts[p] as usize == r {
                dst[p] = src[p];
            }
        }
    }
    let gt = LabelMap::new(
        h,
        w,
        parts.iter().map(|&r| spec.classes[r as usize]).collect(),
    )?;
    Ok((image, gt))
}
