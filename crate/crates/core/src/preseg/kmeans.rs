//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each point, renumbered by first occurrence.
    pub assignments: Vec<usize>,
    /// Centroids, aligned with the renumbered clusters.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after seeding and after every Lloyd iteration of the
    /// winning restart.
    pub history: Vec<f64>,
    /// Whether the winning restart reached an assignment fixpoint.
    pub converged: bool,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its squared distance.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut idx = d.iter().rposition(|&v| v > 0.0).expect("positive total");
            for (i, &v) in d.iter().enumerate() {
                if v > 0.0 && r < v {
                    idx = i;
                    break;
                }
                r -= v;
            }
            idx
        } else {
            // Every point coincides with a centroid already.
            rng.gen_range(0..points.len())
        };
        let c = points[pick].clone();
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Run {
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    history: Vec<f64>,
    converged: bool,
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> Run {
    let dim = points[0].len();
    let k = centroids.len();
    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        points.iter().map(|p| nearest(p, centroids)).unzip()
    };
    let (mut assignments, mut d) = assign(&centroids);
    let mut history = vec![d.iter().sum::<f64>()];
    let mut converged = false;
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        // An empty cluster moves to the point farthest from its centroid.
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a)))
                    .expect("points");
                centroids[j] = points[far].clone();
                d[far] = 0.0;
            }
        }
        let (next, nd) = assign(&centroids);
        history.push(nd.iter().sum());
        d = nd;
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    Run {
        inertia: *history.last().expect("non-empty"),
        assignments,
        centroids,
        history,
        converged,
    }
}

/// Clusters `points` (all of one dimension) into at most `k` groups.
/// Each restart draws its seeding from a seed derived from `config.seed`;
/// the restart with the lowest inertia wins, the earliest on ties.
pub fn kmeans(points: &[Vec<f64>], config: &KMeansConfig) -> Result<KMeansResult> {
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs k >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument(
            "k-means points differ in dimension".into(),
        ));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite k-means feature".into()));
    }
    let mut best: Option<Run> = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = seed::rng(config.seed, "kmeans", r as u64);
        let run = lloyd(
            points,
            seed_plus_plus(points, k, &mut rng),
            config.max_iters,
        );
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let mut order = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &run.assignments {
        if order[a] == usize::MAX {
            order[a] = next;
            next += 1;
        }
    }
    for o in order.iter_mut().filter(|o| **o == usize::MAX) {
        *o = next;
        next += 1;
    }
    let mut centroids = vec![Vec::new(); k];
    for (j, c) in run.centroids.into_iter().enumerate() {
        centroids[order[j]] = c;
    }
    Ok(KMeansResult {
        assignments: run.assignments.iter().map(|&a| order[a]).collect(),
        centroids,
        inertia: run.inertia,
        history: run.history,
        converged: run.converged,
    })
}
