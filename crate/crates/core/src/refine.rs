//! Iterative refinement to a single region per class.
//!
//! Start from the argmax labels, keep the largest patch of each selected
//! class and fill the regions it encloses. Every other pixel is then
//! relabeled to its `x`-th best class, starting with `x = 2`; the kept
//! region of each class grows to the whole patch containing it and is
//! filled again. When the image produced at rank `x` is unchanged since the
//! previous loop iteration the same pass continues at rank `x + 1`. The loop
//! ends once every pixel is kept, which is exactly when the map has one
//! patch per class.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::label::{LabelMap, RankedLabels, ScoreVolume};
use crate::model::{predict_labels, rank_labels};
use crate::patches::{connected_components, enclosed_holes, neighbors4, NO_PATCH};

/// Loop iterations after which refinement gives up and forces a result.
pub const MAX_ITERATIONS: usize = 100;

/// Result of [`largest_patches_fill`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchFill {
    /// Input labels with enclosed regions relabeled to the enclosing class.
    pub labels: LabelMap,
    /// Pixels of the selected patches and of the regions they enclose.
    pub kept: Vec<bool>,
    /// Selected classes, largest patch first.
    pub selected: Vec<u8>,
    /// One flat pixel of each selected patch, aligned with `selected`.
    pub anchors: Vec<usize>,
}

/// Why the refinement loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineOutcome {
    /// One patch per class was reached by relabeling alone.
    Converged,
    /// Ranks ran out, the iteration cap was hit, or fewer than N classes
    /// were present; leftover pixels went to the geodesically nearest kept
    /// region.
    Forced,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefineReport {
    pub labels: LabelMap,
    pub outcome: RefineOutcome,
    /// Loop iterations run (0 when the argmax already had one patch per class).
    pub iterations: usize,
    /// Deepest rank used for relabeling (1 when no relabeling happened).
    pub max_rank: usize,
    /// Classes that had to be selected but never appeared in the argmax.
    pub missing: usize,
}

impl RefineReport {
    pub fn forced(&self) -> bool {
        self.outcome == RefineOutcome::Forced
    }
}

/// Selects the largest patch of each of the `n` classes whose largest
/// patches are biggest (ties: first in raster order) and relabels every
/// region fully enclosed by a selected patch to that patch's class. Ignore
/// pixels are never selected but may be filled.
pub fn largest_patches_fill(labels: &LabelMap, n: usize) -> PatchFill {
    let d = connected_components(labels);
    let mut chosen: Vec<usize> = d.largest_per_class().into_iter().flatten().collect();
    chosen.sort_unstable();
    chosen.truncate(n);
    let selected: Vec<u8> = chosen.iter().map(|&i| d.patches()[i].class).collect();
    let anchors: Vec<usize> = chosen
        .iter()
        .map(|&i| d.patches()[i].first_pixel())
        .collect();
    let mut kept = vec![false; labels.len()];
    for &i in &chosen {
        for &p in &d.patches()[i].pixels {
            kept[p] = true;
        }
    }
    let mut out = labels.clone();
    fill_kept(&mut out, &mut kept, &selected, &anchors);
    PatchFill {
        labels: out,
        kept,
        selected,
        anchors,
    }
}

/// Fills the holes of every kept class region. Holes holding another kept
/// region are left alone.
fn fill_kept(labels: &mut LabelMap, kept: &mut [bool], selected: &[u8], anchors: &[usize]) {
    let (h, w) = (labels.height(), labels.width());
    for (&class, &anchor) in selected.iter().zip(anchors) {
        let lab = labels.as_slice();
        let region: Vec<bool> = (0..lab.len()).map(|p| kept[p] && lab[p] == class).collect();
        let protected: Vec<bool> = (0..lab.len()).map(|p| kept[p] && lab[p] != class).collect();
        debug_assert!(region[anchor]);
        let holes = enclosed_holes(&region, &protected, h, w);
        let lab = labels.as_mut_slice();
        for p in holes {
            lab[p] = class;
            kept[p] = true;
        }
    }
}

/// Grows each kept region to the whole 4-connected patch containing its
/// anchor, then fills enclosed holes.
fn regrow(labels: &mut LabelMap, kept: &mut [bool], selected: &[u8], anchors: &[usize]) {
    let d = connected_components(labels);
    for &a in anchors {
        let id = d.patch_of(a);
        debug_assert_ne!(id, NO_PATCH);
        for &p in &d.patches()[id as usize].pixels {
            kept[p] = true;
        }
    }
    fill_kept(labels, kept, selected, anchors);
}

/// The `rank`-th best class among `selected` at flat pixel `p` (1-based).
fn ranked_class(ranks: &RankedLabels, is_selected: &[bool; 256], p: usize, rank: usize) -> u8 {
    let (y, x) = (p / ranks.width(), p % ranks.width());
    (0..ranks.classes())
        .map(|r| ranks.rank(r, y, x))
        .filter(|&c| is_selected[c as usize])
        .nth(rank - 1)
        .expect("rank within selected classes")
}

/// Gives every unkept pixel the class of the nearest kept pixel along
/// 4-connected paths. Each class region stays connected.
fn geodesic_assign(labels: &mut LabelMap, kept: &mut [bool]) {
    let (h, w) = (labels.height(), labels.width());
    let mut queue: VecDeque<usize> = (0..kept.len()).filter(|&p| kept[p]).collect();
    let lab = labels.as_mut_slice();
    while let Some(p) = queue.pop_front() {
        for q in neighbors4(p, h, w) {
            if !kept[q] {
                kept[q] = true;
                lab[q] = lab[p];
                queue.push_back(q);
            }
        }
    }
}

/// Refines the argmax of `scores` to exactly one 4-connected patch for each
/// of `n` classes.
pub fn refine(scores: &ScoreVolume, n: usize) -> Result<RefineReport> {
    let c = scores.classes();
    if n == 0 || n > c {
        return Err(Error::InvalidArgument(format!(
            "refinement needs 1 <= N <= {c} classes, got {n}"
        )));
    }
    if !scores.tensor().all_finite() {
        return Err(Error::Numerical(
            "non-finite scores passed to refinement".into(),
        ));
    }
    let argmax = predict_labels(scores);
    let ranks = rank_labels(scores);
    let PatchFill {
        mut labels,
        mut kept,
        selected,
        anchors,
    } = largest_patches_fill(&argmax, n);
    let missing = n - selected.len();
    let mut is_selected = [false; 256];
    for &s in &selected {
        is_selected[s as usize] = true;
    }
    let depth = selected.len();
    let done = |kept: &[bool]| kept.iter().all(|&k| k);

    let mut iterations = 0;
    let mut max_rank = 1;
    let mut previous: Vec<Option<LabelMap>> = vec![None; depth + 1];
    let mut exhausted = false;
    while !done(&kept) && missing == 0 && !exhausted && iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut x = 2;
        loop {
            if x > depth {
                exhausted = true;
                break;
            }
            max_rank = max_rank.max(x);
            let lab = labels.as_mut_slice();
            for p in 0..lab.len() {
                if !kept[p] {
                    lab[p] = ranked_class(&ranks, &is_selected, p, x);
                }
            }
            regrow(&mut labels, &mut kept, &selected, &anchors);
            if done(&kept) {
                break;
            }
            if previous[x].as_ref() == Some(&labels) {
                x += 1;
            } else {
                previous[x] = Some(labels.clone());
                break;
            }
        }
    }
    let outcome = if done(&kept) && missing == 0 {
        RefineOutcome::Converged
    } else {
        geodesic_assign(&mut labels, &mut kept);
        RefineOutcome::Forced
    };
    Ok(RefineReport {
        labels,
        outcome,
        iterations,
        max_rank,
        missing,
    })
}
