use crate::label::LabelMap;

use super::matching::overlap_table;

/// Global and local consistency errors in percent, over pixels whose
/// ground truth is not ignore. With `n_ij` the joint counts and `r_i`,
/// `c_j` the region sizes of the two segmentations, the local refinement
/// error of a pixel in cell `(i, j)` is `1 - n_ij / r_i` one way and
/// `1 - n_ij / c_j` the other.
pub fn consistency_measures(pred: &LabelMap, gt: &LabelMap) -> (f64, f64) {
    let table = overlap_table(pred, gt);
    let rows: Vec<usize> = (0..256).map(|p| table[p].iter().sum()).collect();
    let cols: Vec<usize> = (0..256)
        .map(|g| (0..256).map(|p| table[p][g]).sum())
        .collect();
    let n: usize = rows.iter().sum();
    if n == 0 {
        return (0.0, 0.0);
    }
    let (mut e_pg, mut e_gp, mut local) = (0.0, 0.0, 0.0);
    for p in 0..256 {
        if rows[p] == 0 {
            continue;
        }
        for g in 0..256 {
            let nij = table[p][g];
            if nij == 0 {
                continue;
            }
            let a = 1.0 - nij as f64 / rows[p] as f64;
            let b = 1.0 - nij as f64 / cols[g] as f64;
            e_pg += nij as f64 * a;
            e_gp += nij as f64 * b;
            local += nij as f64 * a.min(b);
        }
    }
    let n = n as f64;
    (100.0 * e_pg.min(e_gp) / n, 100.0 * local / n)
}
