use crate::label::LabelMap;

use super::matching::overlap_table;

/// Region-based scores in percent. CS, OS and ME are fractions of the
/// ground-truth regions, US and NE of the predicted regions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegionScores {
    pub cs: f64,
    pub os: f64,
    pub us: f64,
    pub me: f64,
    pub ne: f64,
}

/// Region measures with overlap threshold `t`. A region is the set of
/// pixels carrying one label; pixels whose ground truth is ignore are left
/// out. Let `O` be the overlap of ground-truth region `G` and predicted
/// region `P`:
///
/// * correct: `O >= t|G|` and `O >= t|P|`;
/// * over-segmented `G` (not correct): at least two `P` with
///   `0 < O >= (1 - t)|G|`;
/// * under-segmented `P` (not correct): at least two `G` with
///   `0 < O >= (1 - t)|P|`;
/// * missed `G` / noise `P`: taking part in none of the above.
pub fn region_measures(pred: &LabelMap, gt: &LabelMap, t: f64) -> RegionScores {
    let table = overlap_table(pred, gt);
    let gs: Vec<usize> = (0..256)
        .filter(|&g| (0..256).any(|p| table[p][g] > 0))
        .collect();
    let ps: Vec<usize> = (0..256)
        .filter(|&p| table[p].iter().any(|&o| o > 0))
        .collect();
    if gs.is_empty() {
        return RegionScores::default();
    }
    let gsize = |g: usize| -> usize { (0..256).map(|p| table[p][g]).sum() };
    let psize = |p: usize| -> usize { table[p].iter().sum() };
    let o = |p: usize, g: usize| table[p][g] as f64;

    let mut g_cs = [false; 256];
    let mut p_cs = [false; 256];
    for &g in &gs {
        for &p in &ps {
            let v = o(p, g);
            if v > 0.0 && v >= t * gsize(g) as f64 && v >= t * psize(p) as f64 {
                g_cs[g] = true;
                p_cs[p] = true;
            }
        }
    }
    let mut g_os = [false; 256];
    let mut p_in_os = [false; 256];
    for &g in &gs {
        if g_cs[g] {
            continue;
        }
        let parts: Vec<usize> = ps
            .iter()
            .copied()
            .filter(|&p| o(p, g) > 0.0 && o(p, g) >= (1.0 - t) * gsize(g) as f64)
            .collect();
        if parts.len() >= 2 {
            g_os[g] = true;
            parts.iter().for_each(|&p| p_in_os[p] = true);
        }
    }
    let mut p_us = [false; 256];
    let mut g_in_us = [false; 256];
    for &p in &ps {
        if p_cs[p] {
            continue;
        }
        let parts: Vec<usize> = gs
            .iter()
            .copied()
            .filter(|&g| o(p, g) > 0.0 && o(p, g) >= (1.0 - t) * psize(p) as f64)
            .collect();
        if parts.len() >= 2 {
            p_us[p] = true;
            parts.iter().for_each(|&g| g_in_us[g] = true);
        }
    }
    let pct = |n: usize, d: usize| 100.0 * n as f64 / d as f64;
    let count = |v: &[usize], f: &dyn Fn(usize) -> bool| v.iter().filter(|&&i| f(i)).count();
    RegionScores {
        cs: pct(count(&gs, &|g| g_cs[g]), gs.len()),
        os: pct(count(&gs, &|g| g_os[g]), gs.len()),
        us: pct(count(&ps, &|p| p_us[p]), ps.len()),
        me: pct(
            count(&gs, &|g| !g_cs[g] && !g_os[g] && !g_in_us[g]),
            gs.len(),
        ),
        ne: pct(
            count(&ps, &|p| !p_cs[p] && !p_in_os[p] && !p_us[p]),
            ps.len(),
        ),
    }
}
