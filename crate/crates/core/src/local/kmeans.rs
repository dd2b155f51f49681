//! Visual vocabulary training with Lloyd's k-means and k-means++ seeding.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMEANS_TAG: &str = "codebook.kmeans";
const REL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub iterations: usize,
    /// Objective value after each assignment step.
    pub objective: Vec<f64>,
    /// Clusters that emptied and were re-seeded.
    pub reseeded: usize,
}

impl TrainingMeta {
    pub fn final_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f32>,
    pub meta: TrainingMeta,
}

impl Codebook {
    pub fn from_centroids(dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: centroids.len(),
            });
        }
        if let Some(index) = centroids.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let k = centroids.len() / dim;
        Ok(Self {
            k,
            dim,
            centroids,
            meta: TrainingMeta::default(),
        })
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> (usize, f64) {
        nearest_f32(x, &self.centroids, self.dim)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[inline]
fn sq_dist_f64(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

pub(crate) fn nearest_f32(x: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn nearest_f64(x: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist_f64(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub(crate) fn count_distinct(data: &[f32], dim: usize) -> usize {
    data.chunks_exact(dim)
        .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

fn kmeans_pp(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend(row(first).iter().map(|&v| v as f64));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist_f64(row(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend(row(pick).iter().map(|&v| v as f64));
        let c = &centers[start..];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist_f64(row(i), c));
        }
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Stops after `max_iters` assignment steps or when the relative objective
/// change drops below 1e-6. An emptied cluster is re-seeded with the point
/// farthest from its current centroid.
pub fn learn_codebook_kmeans(data: &[f32], dim: usize, k: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: data.len(),
        });
    }
    if k < 1 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let distinct = count_distinct(data, dim);
    if k > distinct {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {distinct} distinct training rows"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(data, dim, k, &mut rng);
    let mut meta = TrainingMeta {
        seed,
        ..Default::default()
    };
    let n = data.len() / dim;
    let mut assignment: Vec<(usize, f64)> = Vec::new();
    for _ in 0..max_iters.max(1) {
        assignment = data
            .par_chunks_exact(dim)
            .map(|x| nearest_f64(x, &centers, dim))
            .collect();
        let objective: f64 = assignment.iter().map(|a| a.1).sum();
        let prev = meta.objective.last().copied();
        meta.objective.push(objective);
        meta.iterations += 1;
        if let Some(prev) = prev {
            if prev == 0.0 || (prev - objective) / prev < REL_TOL {
                break;
            }
        }
        if objective == 0.0 {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &(c, _)) in data.chunks_exact(dim).zip(&assignment) {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| assignment[a].1.total_cmp(&assignment[b].1).then(b.cmp(&a)))
                    .expect("non-empty data");
                centers[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&data[far * dim..(far + 1) * dim])
                    .for_each(|(dst, &v)| *dst = v as f64);
                assignment[far].1 = 0.0;
                meta.reseeded += 1;
                log::debug!("k-means: cluster {c} emptied, re-seeded from row {far}");
            }
        }
    }
    drop(assignment);
    Ok(Codebook {
        k,
        dim,
        centroids: centers.iter().map(|&v| v as f32).collect(),
        meta,
    })
}
