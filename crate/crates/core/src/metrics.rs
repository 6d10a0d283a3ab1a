//! Clustering and selection scores.

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::restart_rng;

const LLOYD_MAX_ITERS: usize = 300;

/// Result of [`kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster index in `0..kappa` for every row.
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|d| (points[(i, d)] - centroids[(c, d)]).powi(2))
        .sum()
}

fn nearest(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = sq_dist(points, i, centroids, c);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds<R: Rng>(points: &DMatrix<f64>, kappa: usize, rng: &mut R) -> DMatrix<f64> {
    let (n, dim) = points.shape();
    let mut centroids = DMatrix::zeros(kappa, dim);
    centroids.set_row(0, &points.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..kappa {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // every point coincides with a centroid already
            Err(_) => rng.random_range(0..n),
        };
        centroids.set_row(c, &points.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn lloyd(points: &DMatrix<f64>, mut centroids: DMatrix<f64>) -> KMeans {
    let (n, dim) = points.shape();
    let kappa = centroids.nrows();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITERS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(points, i, &centroids);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(kappa, dim);
        let mut counts = vec![0usize; kappa];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for d in 0..dim {
                sums[(c, d)] += points[(i, d)];
            }
        }
        for c in 0..kappa {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[(c, d)] = sums[(c, d)] / counts[c] as f64;
                }
            }
        }
        for c in 0..kappa {
            if counts[c] == 0 {
                // reseed at the point farthest from its centroid
                let far = (0..n)
                    .map(|i| (i, sq_dist(points, i, &centroids, labels[i])))
                    .fold((0, f64::NEG_INFINITY), |best, cand| {
                        if cand.1 > best.1 {
                            cand
                        } else {
                            best
                        }
                    })
                    .0;
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                centroids.set_row(c, &points.row(far));
            }
        }
    }
    let wcss = (0..n)
        .map(|i| sq_dist(points, i, &centroids, labels[i]))
        .sum();
    KMeans {
        labels,
        centroids,
        wcss,
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` by
/// within-cluster sum of squares. Restart `r` draws from stream `r` of
/// `seed`, so the result is deterministic.
pub fn kmeans(points: &DMatrix<f64>, kappa: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    let n = points.nrows();
    if kappa == 0 || restarts == 0 {
        return Err(Error::InvalidInput(
            "kappa and restarts must be at least 1".into(),
        ));
    }
    if kappa > n {
        return Err(Error::InvalidInput(format!(
            "cannot form {kappa} clusters from {n} points"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("points must be finite".into()));
    }
    let runs: Vec<KMeans> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(seed, r);
            lloyd(points, plus_plus_seeds(points, kappa, &mut rng))
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, run| if run.wcss < best.wcss { run } else { best })
        .expect("at least one restart"))
}

fn contingency<A: Eq + Hash + Clone, B: Eq + Hash + Clone>(
    p: &[A],
    q: &[B],
) -> (Vec<u64>, Vec<u64>, Vec<u64>) {
    let mut cells: HashMap<(A, B), u64> = HashMap::new();
    let mut rows: HashMap<A, u64> = HashMap::new();
    let mut cols: HashMap<B, u64> = HashMap::new();
    for (a, b) in p.iter().zip(q) {
        *cells.entry((a.clone(), b.clone())).or_default() += 1;
        *rows.entry(a.clone()).or_default() += 1;
        *cols.entry(b.clone()).or_default() += 1;
    }
    (
        cells.into_values().collect(),
        rows.into_values().collect(),
        cols.into_values().collect(),
    )
}

fn pairs(c: u64) -> f64 {
    (c * c.saturating_sub(1)) as f64 / 2.0
}

/// Hubert–Arabie adjusted Rand index of two labelings.
///
/// When both partitions are trivial in the same way (all singletons or one
/// block) the index is 1.
pub fn adjusted_rand_index<A: Eq + Hash + Clone, B: Eq + Hash + Clone>(
    p: &[A],
    q: &[B],
) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("{} labels", p.len()), q.len()));
    }
    let (cells, rows, cols) = contingency(p, q);
    let index: f64 = cells.iter().map(|&c| pairs(c)).sum();
    let row_pairs: f64 = rows.iter().map(|&c| pairs(c)).sum();
    let col_pairs: f64 = cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(p.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = row_pairs * col_pairs / total;
    let max = 0.5 * (row_pairs + col_pairs);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Fraction of genes whose selection status matches the truth.
pub fn selection_accuracy(selected: &[bool], truth: &[bool]) -> Result<f64> {
    if selected.len() != truth.len() {
        return Err(Error::shape(
            format!("{} genes", truth.len()),
            selected.len(),
        ));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no genes to score".into()));
    }
    let hits = selected.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}
