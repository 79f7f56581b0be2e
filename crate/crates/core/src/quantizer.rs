//! k-means codebooks and frame quantization into discrete units.
//!
//! Quantization keeps consecutive repeats: one unit per input frame.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Row-major `rows × dim` matrix of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be at least 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::ShapeMismatch("feature buffer is not a whole number of rows".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k × dim`.
    pub centroids: Vec<f64>,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnitSequence {
    pub units: Vec<u32>,
    pub frame_rate: Option<f64>,
}

/// Result of a fit, with the inertia after each assignment step.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub codebook: Codebook,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(centroid, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn kmeans_fit(features: &Features, k: usize, max_iters: usize, seed: u64) -> Result<Codebook> {
    kmeans_fit_traced(features, k, max_iters, seed).map(|t| t.codebook)
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops after `max_iters` assignment steps or when assignments no longer
/// change. An empty cluster is re-seeded at the point currently farthest from
/// its own centroid.
pub fn kmeans_fit_traced(features: &Features, k: usize, max_iters: usize, seed: u64) -> Result<FitTrace> {
    let n = features.rows();
    let dim = features.dim;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    for i in 0..n {
        if features.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row: i });
        }
    }

    let mut rng = rng::stream(seed, &[rng::purpose::KMEANS]);
    let mut centroids = plus_plus_init(features, k, &mut rng);

    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, d) = nearest(&centroids, dim, features.row(i));
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            dists[i] = d;
            inertia += d;
        }
        debug_assert!(
            history.last().map_or(true, |&prev: &f64| inertia <= prev * (1.0 + 1e-12) + 1e-300),
            "inertia increased"
        );
        history.push(inertia);
        if !changed {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = s / inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Farthest point from its assigned centroid (first on ties).
                let far = (0..n).fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
                centroids[c * dim..(c + 1) * dim].copy_from_slice(features.row(far));
                dists[far] = 0.0;
                counts[c] = 1;
            }
        }
    }

    let inertia = *history.last().expect("at least one iteration");
    Ok(FitTrace { codebook: Codebook { k, dim, centroids, inertia }, inertia_history: history, iterations })
}

fn plus_plus_init<R: Rng>(features: &Features, k: usize, rng: &mut R) -> Vec<f64> {
    let n = features.rows();
    let dim = features.dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(features.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), features.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All points coincide with chosen centroids.
            rng.gen_range(0..n)
        };
        let row = features.row(pick);
        centroids.extend_from_slice(row);
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = sq_dist(features.row(i), row);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Maps each frame to its nearest centroid. No deduplication.
pub fn quantize(codebook: &Codebook, features: &Features) -> Result<UnitSequence> {
    if features.dim != codebook.dim {
        return Err(Error::DimensionMismatch { expected: codebook.dim, got: features.dim });
    }
    let units =
        (0..features.rows()).map(|i| nearest(&codebook.centroids, codebook.dim, features.row(i)).0 as u32).collect();
    Ok(UnitSequence { units, frame_rate: None })
}
