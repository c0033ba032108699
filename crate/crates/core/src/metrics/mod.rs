//! Segmentation measures: pixel-wise (CO, CA), region-based (CS, OS, US,
//! ME, NE) and consistency (GCE, LCE), all in percent.
//!
//! The definitions are fixed here so results are self-consistent; they
//! follow the usual benchmark conventions but are not guaranteed to match
//! any evaluation server digit for digit.

mod consistency;
mod matching;
mod pixel;
mod region;

use std::fmt::{self, Write as _};

pub use consistency::consistency_measures;
pub use matching::{hungarian, match_labels, LabelMatch, Matching};
pub use pixel::pixel_measures;
pub use region::{region_measures, RegionScores};

use crate::error::{check_dim, Result};
use crate::label::LabelMap;
use crate::manifest::Manifest;

/// Default mutual-overlap threshold for the region measures.
pub const DEFAULT_THRESHOLD: f64 = 0.75;

/// Benchmark measures that are not computed; their report keys are reserved.
pub const RESERVED_MEASURES: [&str; 9] = ["CC", "EA", "MS", "CI", "O", "C", "I.", "II.", "RM"];

/// All measures for one image.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Scores {
    pub co: f64,
    pub ca: f64,
    pub cs: f64,
    pub os: f64,
    pub us: f64,
    pub me: f64,
    pub ne: f64,
    pub gce: f64,
    pub lce: f64,
}

/// Name, direction (`true` when larger is better) and value accessor.
pub type Measure = (&'static str, bool, fn(&Scores) -> f64);

/// Every measure, in report order.
pub const MEASURES: [Measure; 9] = [
    ("CS", true, |s| s.cs),
    ("OS", false, |s| s.os),
    ("US", false, |s| s.us),
    ("ME", false, |s| s.me),
    ("NE", false, |s| s.ne),
    ("CO", true, |s| s.co),
    ("CA", true, |s| s.ca),
    ("GCE", false, |s| s.gce),
    ("LCE", false, |s| s.lce),
];

/// Scores a prediction already in correspondence with `gt`.
pub fn score_image(pred: &LabelMap, gt: &LabelMap, threshold: f64) -> Result<Scores> {
    pred.same_extents(gt)?;
    let (co, ca) = pixel_measures(pred, gt);
    let r = region_measures(pred, gt, threshold);
    let (gce, lce) = consistency_measures(pred, gt);
    Ok(Scores {
        co,
        ca,
        cs: r.cs,
        os: r.os,
        us: r.us,
        me: r.me,
        ne: r.ne,
        gce,
        lce,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageReport {
    pub name: String,
    pub scores: Scores,
    /// Prediction labels changed by the matching, as `(from, to)`.
    pub relabeled: Vec<(u8, u8)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub matching: Matching,
    pub threshold: f64,
    pub mean: Scores,
    pub images: Vec<ImageReport>,
}

/// Matches and scores every `(pred, gt)` pair and averages uniformly.
pub fn evaluate_suite(
    names: &[String],
    preds: &[LabelMap],
    gts: &[LabelMap],
    mode: Matching,
    threshold: f64,
) -> Result<EvalReport> {
    check_dim("prediction count", gts.len(), preds.len())?;
    check_dim("name count", gts.len(), names.len())?;
    let mut images = Vec::with_capacity(gts.len());
    for ((name, pred), gt) in names.iter().zip(preds).zip(gts) {
        pred.same_extents(gt)?;
        let m = match_labels(pred, gt, mode);
        let scores = score_image(&m.apply(pred), gt, threshold)?;
        images.push(ImageReport {
            name: name.clone(),
            scores,
            relabeled: m.pairs(),
        });
    }
    let mut mean = Scores::default();
    if !images.is_empty() {
        let k = images.len() as f64;
        let avg = |f: fn(&Scores) -> f64| images.iter().map(|i| f(&i.scores)).sum::<f64>() / k;
        mean = Scores {
            co: avg(|s| s.co),
            ca: avg(|s| s.ca),
            cs: avg(|s| s.cs),
            os: avg(|s| s.os),
            us: avg(|s| s.us),
            me: avg(|s| s.me),
            ne: avg(|s| s.ne),
            gce: avg(|s| s.gce),
            lce: avg(|s| s.lce),
        };
    }
    Ok(EvalReport {
        matching: mode,
        threshold,
        mean,
        images,
    })
}

impl EvalReport {
    /// Machine-readable `key = value` form.
    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("matching", self.matching.name());
        m.set("threshold", self.threshold);
        m.set("images", self.images.len());
        for (name, _, f) in MEASURES {
            m.set(format!("mean.{name}"), format!("{:.6}", f(&self.mean)));
        }
        m.set("reserved", RESERVED_MEASURES.join(","));
        for img in &self.images {
            for (name, _, f) in MEASURES {
                m.set(
                    format!("image.{}.{name}", img.name),
                    format!("{:.6}", f(&img.scores)),
                );
            }
            if !img.relabeled.is_empty() {
                let pairs: Vec<String> = img
                    .relabeled
                    .iter()
                    .map(|(a, b)| format!("{a}->{b}"))
                    .collect();
                m.set(format!("image.{}.matching", img.name), pairs.join(","));
            }
        }
        m
    }
}

/// Aligned table with one row per measure; the arrow tells whether larger
/// (↑) or smaller (↓) values are better.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} image(s), matching {}, region threshold {}",
            self.images.len(),
            self.matching.name(),
            self.threshold
        )?;
        let mut header = format!("{:<6}{:>9}", "", "mean");
        for img in &self.images {
            let _ = write!(header, " {:>9}", truncate(&img.name, 9));
        }
        writeln!(f, "{}", header.trim_end())?;
        for (name, up, get) in MEASURES {
            let arrow = if up { '↑' } else { '↓' };
            let mut row = format!("{arrow} {name:<4}{:>9.2}", get(&self.mean));
            for img in &self.images {
                let _ = write!(row, " {:>9.2}", get(&img.scores));
            }
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_maps_are_perfect() {
        let gt = LabelMap::parse("0 0 1\n2 2 1").unwrap();
        let s = score_image(&gt, &gt, DEFAULT_THRESHOLD).unwrap();
        assert_eq!((s.co, s.ca, s.cs), (100.0, 100.0, 100.0));
        assert_eq!(
            (s.os, s.us, s.me, s.ne, s.gce, s.lce),
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn half_plane_against_one_class() {
        let gt = LabelMap::parse("0 0 1 1\n0 0 1 1").unwrap();
        let pred = LabelMap::filled(2, 4, 0);
        let (co, ca) = pixel_measures(&pred, &gt);
        assert_eq!((co, ca), (50.0, 50.0));
    }

    #[test]
    fn halved_region_is_over_segmented() {
        let gt = LabelMap::filled(2, 4, 0);
        let pred = LabelMap::parse("0 0 1 1\n0 0 1 1").unwrap();
        let r = region_measures(&pred, &gt, 0.75);
        assert_eq!(r.cs, 0.0);
        assert_eq!(r.os, 100.0);
        assert_eq!(r.ne, 0.0);
        // Symmetric case: two gt regions merged by one prediction.
        let r = region_measures(&gt, &pred, 0.75);
        assert_eq!(r.us, 100.0);
        assert_eq!(r.me, 0.0);
    }

    #[test]
    fn ignore_pixels_are_excluded() {
        let gt = LabelMap::parse("0 . 1").unwrap();
        let pred = LabelMap::parse("0 1 1").unwrap();
        let s = score_image(&pred, &gt, 0.75).unwrap();
        assert_eq!(s.co, 100.0);
        assert_eq!(s.cs, 100.0);
    }

    #[test]
    fn suite_averages_and_renders() {
        let gt = LabelMap::parse("0 0 1 1").unwrap();
        let swapped = LabelMap::parse("1 1 0 0").unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let r = evaluate_suite(
            &names,
            &[gt.clone(), swapped.clone()],
            &[gt.clone(), gt.clone()],
            Matching::Identity,
            0.75,
        )
        .unwrap();
        assert_eq!(r.mean.co, 50.0);
        let r = evaluate_suite(
            &names,
            &[gt.clone(), swapped],
            &[gt.clone(), gt.clone()],
            Matching::Hungarian,
            0.75,
        )
        .unwrap();
        assert_eq!(r.mean.co, 100.0);
        let text = r.to_string();
        assert!(text.contains("↑ CO") && text.contains("↓ GCE"), "{text}");
        let kv = r.to_manifest();
        assert_eq!(kv.get("mean.CO"), Some("100.000000"));
        assert_eq!(kv.get("image.b.matching"), Some("0->1,1->0"));
        assert!(evaluate_suite(
            &names,
            std::slice::from_ref(&gt),
            &[gt.clone(), gt.clone()],
            Matching::Identity,
            0.75
        )
        .is_err());
    }
}
