use crate::label::{LabelMap, IGNORE};

/// Pixel-wise scores `(CO, CA)` in percent over non-ignore ground-truth
/// pixels. CA averages per-class recall over the classes present in `gt`.
pub fn pixel_measures(pred: &LabelMap, gt: &LabelMap) -> (f64, f64) {
    let mut total = [0usize; 256];
    let mut hit = [0usize; 256];
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if g != IGNORE {
            total[g as usize] += 1;
            hit[g as usize] += usize::from(p == g);
        }
    }
    let n: usize = total.iter().sum();
    if n == 0 {
        log::warn!("ground truth has no labeled pixels; pixel measures are 0");
        return (0.0, 0.0);
    }
    let correct: usize = hit.iter().sum();
    let classes: Vec<usize> = (0..256).filter(|&c| total[c] > 0).collect();
    let ca = classes
        .iter()
        .map(|&c| hit[c] as f64 / total[c] as f64)
        .sum::<f64>()
        / classes.len() as f64;
    (100.0 * correct as f64 / n as f64, 100.0 * ca)
}
