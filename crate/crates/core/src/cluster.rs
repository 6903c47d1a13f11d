//! K-means over latent vectors and the cluster-count selection heuristic:
//! images from one demonstration show different situations, so a good
//! clustering never puts two of them in the same cluster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DemoCorpus;

const MAX_ITERS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least {k} distinct points, found {distinct}")]
    Degenerate { k: usize, distinct: usize },
    #[error("latents have inconsistent dimensions")]
    Ragged,
    #[error("{labels} cluster labels for {raw} raw observations")]
    LabelCount { labels: usize, raw: usize },
    #[error("invalid k range or threshold: {0}")]
    Selection(String),
    #[error("no k in range has an incorrect-sequence rate below {threshold}; curve: {curve:?}")]
    NoK { threshold: f64, curve: Vec<KCurvePoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>], cap: usize) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for p in points {
        if !seen.contains(&p.as_slice()) {
            seen.push(p);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

fn kmeans_pp_seed<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            // Guard against the tail landing on an existing centroid.
            if d2[pick] == 0.0 {
                d2.iter().position(|w| *w > 0.0).unwrap_or(pick)
            } else {
                pick
            }
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centroids);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&c, p) in labels.iter().zip(points) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed an emptied cluster at the point farthest from its centroid.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centroids[labels[a]]);
                        let db = sq_dist(&points[b], &centroids[labels[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
                labels[far] = c;
            }
        }
    }
    let inertia = labels.iter().zip(points).map(|(&c, p)| sq_dist(p, &centroids[c])).sum();
    Clustering { k, centroids, labels, inertia }
}

/// Best-inertia clustering over `restarts` k-means++ initialisations.
pub fn kmeans_fit(latents: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<Clustering, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if latents.iter().any(|p| p.len() != latents.first().map_or(0, Vec::len)) {
        return Err(ClusterError::Ragged);
    }
    let distinct = distinct_count(latents, k);
    if distinct < k {
        return Err(ClusterError::Degenerate { k, distinct });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeans_pp_seed(latents, k, &mut rng);
        let fit = lloyd(latents, init);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

/// Sequences in which two or more images share a cluster label. `labels`
/// follows [`DemoCorpus::raw_observations`] order.
pub fn incorrect_sequence_count(labels: &[usize], corpus: &DemoCorpus) -> Result<usize, ClusterError> {
    let raw = corpus.raw_count();
    if labels.len() != raw {
        return Err(ClusterError::LabelCount { labels: labels.len(), raw });
    }
    let mut next = 0;
    let mut incorrect = 0;
    for seq in corpus.sequences() {
        let n = seq.observations().iter().filter(|o| o.features().is_some()).count();
        let mut seen = labels[next..next + n].to_vec();
        next += n;
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            incorrect += 1;
        }
    }
    Ok(incorrect)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCurvePoint {
    pub k: usize,
    pub incorrect: usize,
    /// `incorrect` over the number of sequences.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub clustering: Clustering,
    pub curve: Vec<KCurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectKConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub threshold: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SelectKConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 8, threshold: 0.02, restarts: 10, seed: 0 }
    }
}

/// Clusterings and incorrect-sequence counts for every k in range, in
/// ascending k.
pub fn k_curve(
    corpus: &DemoCorpus,
    latents: &[Vec<f64>],
    cfg: &SelectKConfig,
) -> Result<(Vec<KCurvePoint>, Vec<Clustering>), ClusterError> {
    if cfg.k_min == 0 || cfg.k_min > cfg.k_max {
        return Err(ClusterError::Selection(format!("empty k range {}..={}", cfg.k_min, cfg.k_max)));
    }
    let fits: Vec<Result<Clustering, ClusterError>> = (cfg.k_min..=cfg.k_max)
        .into_par_iter()
        .map(|k| kmeans_fit(latents, k, k_seed(cfg.seed, k), cfg.restarts))
        .collect();
    let total = corpus.len() as f64;
    let mut curve = Vec::new();
    let mut clusterings = Vec::new();
    for fit in fits {
        let c = fit?;
        let incorrect = incorrect_sequence_count(&c.labels, corpus)?;
        curve.push(KCurvePoint { k: c.k, incorrect, rate: incorrect as f64 / total });
        clusterings.push(c);
    }
    Ok((curve, clusterings))
}

/// Seed used for the clustering at a given k.
pub fn k_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Clusters at every k in range and returns the smallest k whose
/// incorrect-sequence rate is below the threshold (any rate passes at a
/// threshold of 1 or more), together with the whole curve.
pub fn select_k(corpus: &DemoCorpus, latents: &[Vec<f64>], cfg: &SelectKConfig) -> Result<KSelection, ClusterError> {
    if !(cfg.threshold > 0.0) {
        return Err(ClusterError::Selection(format!("threshold must be positive, got {}", cfg.threshold)));
    }
    let (curve, mut clusterings) = k_curve(corpus, latents, cfg)?;
    let pick = curve.iter().position(|p| p.rate < cfg.threshold || cfg.threshold >= 1.0);
    match pick {
        Some(i) => Ok(KSelection { k: curve[i].k, clustering: clusterings.swap_remove(i), curve }),
        None => Err(ClusterError::NoK { threshold: cfg.threshold, curve }),
    }
}
