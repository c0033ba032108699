//! Connected same-label regions ("patches") of a label map.
//!
//! Patches are 4-connected. Enclosure tests treat the background as
//! 8-connected, the usual digital-topology pairing, so a 4-connected ring
//! really separates its inside from its outside.

use std::collections::VecDeque;

use crate::label::{LabelMap, IGNORE};

/// Marker for pixels that belong to no patch (ignore pixels).
pub const NO_PATCH: u32 = u32::MAX;

/// One 4-connected single-class region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub class: u8,
    /// Flat pixel indices in discovery order; `pixels[0]` is the first
    /// pixel of the patch in raster order.
    pub pixels: Vec<usize>,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }

    pub fn first_pixel(&self) -> usize {
        self.pixels[0]
    }
}

/// Partition of the non-ignore pixels of a label map into patches, ordered
/// by decreasing size and then by first pixel in raster order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchDecomposition {
    height: usize,
    width: usize,
    patches: Vec<Patch>,
    patch_of: Vec<u32>,
    class_count: usize,
}

impl PatchDecomposition {
    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    /// Number of patches.
    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    /// Number of distinct classes present.
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Patch index of a flat pixel, or [`NO_PATCH`] for ignore pixels.
    pub fn patch_of(&self, pixel: usize) -> u32 {
        self.patch_of[pixel]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Index of the largest patch of every class (`None` when absent),
    /// indexed by class value.
    pub fn largest_per_class(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; 256];
        for (i, p) in self.patches.iter().enumerate() {
            if out[p.class as usize].is_none() {
                out[p.class as usize] = Some(i);
            }
        }
        out
    }
}

/// 4-neighbours of a flat index.
#[inline]
pub(crate) fn neighbors4(p: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (p / w, p % w);
    let up = (y > 0).then(|| p - w);
    let down = (y + 1 < h).then(|| p + w);
    let left = (x > 0).then(|| p - 1);
    let right = (x + 1 < w).then(|| p + 1);
    [up, down, left, right].into_iter().flatten()
}

#[inline]
pub(crate) fn neighbors8(p: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = ((p / w) as isize, (p % w) as isize);
    let (h, w) = (h as isize, w as isize);
    (-1..=1isize)
        .flat_map(move |dy| (-1..=1isize).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy != 0 || dx != 0)
        .filter_map(move |(dy, dx)| {
            let (ny, nx) = (y + dy, x + dx);
            (ny >= 0 && nx >= 0 && ny < h && nx < w).then(|| (ny * w + nx) as usize)
        })
}

/// 4-connected same-label components of `labels`; ignore pixels belong to
/// no patch.
pub fn connected_components(labels: &LabelMap) -> PatchDecomposition {
    let (h, w) = (labels.height(), labels.width());
    let lab = labels.as_slice();
    let mut patch_of = vec![NO_PATCH; lab.len()];
    let mut patches: Vec<Patch> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..lab.len() {
        if lab[start] == IGNORE || patch_of[start] != NO_PATCH {
            continue;
        }
        let id = patches.len() as u32;
        let class = lab[start];
        let mut pixels = vec![start];
        patch_of[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors4(p, h, w) {
                if patch_of[q] == NO_PATCH && lab[q] == class {
                    patch_of[q] = id;
                    pixels.push(q);
                    queue.push_back(q);
                }
            }
        }
        patches.push(Patch { class, pixels });
    }
    // Stable sort keeps raster order of first pixels among equal sizes.
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by(|&a, &b| patches[b].size().cmp(&patches[a].size()));
    let mut rank = vec![0u32; patches.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new as u32;
    }
    for id in patch_of.iter_mut().filter(|id| **id != NO_PATCH) {
        *id = rank[*id as usize];
    }
    let mut slots: Vec<Option<Patch>> = patches.into_iter().map(Some).collect();
    let patches: Vec<Patch> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
    let class_count = labels.classes().len();
    PatchDecomposition {
        height: h,
        width: w,
        patches,
        patch_of,
        class_count,
    }
}

/// Pixels outside `region` that lie in an 8-connected hole of it: a
/// component of non-`region` pixels that does not reach the image border.
/// Holes containing any `protected` pixel are skipped.
pub fn enclosed_holes(region: &[bool], protected: &[bool], h: usize, w: usize) -> Vec<usize> {
    debug_assert_eq!(region.len(), h * w);
    let mut seen = vec![false; region.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let mut comp = Vec::new();
    for start in 0..region.len() {
        if region[start] || seen[start] {
            continue;
        }
        comp.clear();
        let mut open = false;
        let mut guarded = false;
        seen[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (y, x) = (p / w, p % w);
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                open = true;
            }
            if protected[p] {
                guarded = true;
            }
            for q in neighbors8(p, h, w) {
                if !region[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        if !open && !guarded {
            out.extend_from_slice(&comp);
        }
    }
    out.sort_unstable();
    out
}
