//! Anchor scales and aspect ratios from 1-D k-means over box statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coco::Annotation;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;

/// Result of Lloyd's algorithm on a set of scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans1d {
    /// Ascending.
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squares after each iteration.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    /// Fewer distinct values than clusters.
    pub degenerate: bool,
}

impl KMeans1d {
    pub fn final_wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }
}

fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate().skip(1) {
        if (v - c).abs() < (v - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

fn wcss(values: &[f64], assign: &[usize], centroids: &[f64]) -> f64 {
    values.iter().zip(assign).map(|(v, &a)| (v - centroids[a]).powi(2)).sum()
}

/// Lloyd's k-means on scalars. Input order does not matter: values are
/// sorted first and centroids start at the `(j + 0.5) / k` quantiles.
/// Empty clusters are moved to a seeded random value not already used as a
/// centroid.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<KMeans1d> {
    if k == 0 {
        return Err(Error::Data("k must be positive".into()));
    }
    if values.len() < k {
        return Err(Error::Data(format!("need at least {k} values for {k} clusters, got {}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value {v} in k-means input")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut distinct = sorted.clone();
    distinct.dedup();
    let degenerate = distinct.len() < k;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f64> = (0..k).map(|j| sorted[((2 * j + 1) * n) / (2 * k)]).collect();
    let mut assign: Vec<usize> = sorted.iter().map(|&v| nearest(&centroids, v)).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&v, &a) in sorted.iter().zip(&assign) {
            sums[a] += v;
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            } else {
                let unused: Vec<f64> = distinct.iter().copied().filter(|d| !centroids.contains(d)).collect();
                if !unused.is_empty() {
                    centroids[j] = unused[rng.random_range(0..unused.len())];
                }
            }
        }
        history.push(wcss(&sorted, &assign, &centroids));
        let next: Vec<usize> = sorted.iter().map(|&v| nearest(&centroids, v)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    centroids.sort_by(f64::total_cmp);
    Ok(KMeans1d { centroids, wcss_history: history, iterations, degenerate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorClustering {
    pub anchors: AnchorSet,
    pub scale_fit: KMeans1d,
    pub ratio_fit: KMeans1d,
}

/// Clusters `sqrt(w*h)` into `n_scales` and `w/h` into `n_ratios` groups.
pub fn cluster_anchors(
    annotations: &[Annotation],
    n_scales: usize,
    n_ratios: usize,
    seed: u64,
) -> Result<AnchorClustering> {
    let scales: Vec<f64> = annotations.iter().map(Annotation::scale).collect();
    let ratios: Vec<f64> = annotations.iter().map(Annotation::ratio).collect();
    let scale_fit = kmeans_1d(&scales, n_scales, seed)?;
    let ratio_fit = kmeans_1d(&ratios, n_ratios, seed.wrapping_add(1))?;
    let anchors = AnchorSet {
        scales: scale_fit.centroids.clone(),
        ratios: ratio_fit.centroids.clone(),
        degenerate: scale_fit.degenerate || ratio_fit.degenerate,
    };
    Ok(AnchorClustering { anchors, scale_fit, ratio_fit })
}
