//! Label correspondence between a prediction and a ground truth.

use crate::label::{LabelMap, IGNORE};

/// How prediction labels are put in correspondence with ground-truth labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Matching {
    /// Labels are compared as they are.
    #[default]
    Identity,
    /// One-to-one relabeling maximizing the number of agreeing pixels.
    Hungarian,
}

impl Matching {
    pub fn name(self) -> &'static str {
        match self {
            Matching::Identity => "identity",
            Matching::Hungarian => "hungarian",
        }
    }
}

impl std::str::FromStr for Matching {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "identity" => Ok(Matching::Identity),
            "hungarian" | "hungarian-overlap" => Ok(Matching::Hungarian),
            _ => Err(crate::Error::InvalidArgument(format!(
                "unknown matching {s:?} (identity | hungarian)"
            ))),
        }
    }
}

/// `overlap[i][j]` counts pixels with prediction `i` and ground truth `j`,
/// over pixels whose ground truth is not ignore.
pub(crate) fn overlap_table(pred: &LabelMap, gt: &LabelMap) -> Vec<[usize; 256]> {
    let mut t = vec![[0usize; 256]; 256];
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if g != IGNORE {
            t[p as usize][g as usize] += 1;
        }
    }
    t
}

/// Minimum-cost assignment of every row to a distinct column of a
/// `rows x cols` matrix with `rows <= cols`. Returns the column per row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // Potentials method with 1-based sentinels (row 0 / column 0 are virtual).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

/// A relabeling table for prediction maps; ignore always maps to ignore.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatch {
    pub mode: Matching,
    pub table: [u8; 256],
}

impl LabelMatch {
    pub fn apply(&self, pred: &LabelMap) -> LabelMap {
        pred.remap(&self.table)
    }

    /// `(prediction, ground truth)` pairs that were changed by the match.
    pub fn pairs(&self) -> Vec<(u8, u8)> {
        (0..=254u8)
            .filter(|&l| self.table[l as usize] != l)
            .map(|l| (l, self.table[l as usize]))
            .collect()
    }
}

fn identity_table() -> [u8; 256] {
    std::array::from_fn(|i| i as u8)
}

/// Computes the correspondence of `pred` labels to `gt` labels. Under
/// Hungarian matching, prediction labels left unmatched get fresh labels
/// absent from the ground truth so they can never count as correct.
pub fn match_labels(pred: &LabelMap, gt: &LabelMap, mode: Matching) -> LabelMatch {
    if mode == Matching::Identity {
        return LabelMatch {
            mode,
            table: identity_table(),
        };
    }
    let table = overlap_table(pred, gt);
    let p_labels = pred.classes();
    let g_labels = gt.classes();
    let mut out = identity_table();
    if p_labels.is_empty() {
        return LabelMatch { mode, table: out };
    }
    // Square the problem: dummy columns have zero overlap.
    let size = p_labels.len().max(g_labels.len());
    let cost: Vec<Vec<f64>> = p_labels
        .iter()
        .map(|&p| {
            (0..size)
                .map(|j| {
                    g_labels
                        .get(j)
                        .map_or(0.0, |&g| -(table[p as usize][g as usize] as f64))
                })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    let mut used = [false; 256];
    for &g in &g_labels {
        used[g as usize] = true;
    }
    let mut fresh = (0..IGNORE).filter(|&l| !used[l as usize]);
    for (&p, &j) in p_labels.iter().zip(&assign) {
        out[p as usize] = match g_labels.get(j) {
            Some(&g) => g,
            None => fresh.next().expect("fewer than 255 labels in use"),
        };
    }
    LabelMatch { mode, table: out }
}
