//! Lloyd's k-means with k-means++ seeding and restarts.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::{self, Purpose};
use crate::tensor::{sq_dist, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: u32,
    pub max_iter: u32,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

/// Index of the nearest row of `centroids` (ties to the lower index) and the squared distance.
pub fn nearest(centroids: &Matrix, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(data: &Matrix, k: usize, rng: &mut rng::Rng) -> Matrix {
    let n = data.rows();
    let mut centroids = Matrix::zeros(k, data.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(data.row(first));
    let mut d2: Vec<f64> = data.iter_rows().map(|x| sq_dist(x, data.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(data.row(pick));
        for (i, x) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(data: &Matrix, mut centroids: Matrix, max_iter: u32) -> KMeans {
    let (n, dim, k) = (data.rows(), data.cols(), centroids.rows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, x) in data.iter_rows().enumerate() {
            let (j, _) = nearest(&centroids, x);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, x) in data.iter_rows().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(data.row(a), centroids.row(labels[a]));
                        let db = sq_dist(data.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty data");
                centroids.row_mut(j).copy_from_slice(data.row(far));
                labels[far] = j;
            } else {
                let inv = 1.0 / counts[j] as f64;
                for (c, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *c = s * inv;
                }
            }
        }
    }
    let mut inertia = 0.0;
    for (i, x) in data.iter_rows().enumerate() {
        let (j, d) = nearest(&centroids, x);
        labels[i] = j;
        inertia += d;
    }
    KMeans {
        centroids,
        labels,
        inertia,
    }
}

/// Best of `cfg.restarts` k-means++ seeded runs by inertia.
pub fn kmeans(data: &Matrix, k: usize, cfg: KMeansConfig) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidConfig {
            key: "k",
            reason: "must be positive".into(),
        });
    }
    if data.rows() < k {
        return Err(Error::TooFewSamples {
            context: "k-means",
            needed: k,
            available: data.rows(),
        });
    }
    let mut best: Option<KMeans> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = rng::stream(cfg.seed, Purpose::Cluster, (u64::from(r) << 32) | k as u64);
        let fit = lloyd(data, seed_plus_plus(data, k, &mut rng), cfg.max_iter);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
