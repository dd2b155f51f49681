//! Diagonal-covariance Gaussian mixtures trained by EM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::learn_codebook_kmeans;
use crate::error::{Error, Result};

pub const GMM_TAG: &str = "codebook.gmm";
pub const VARIANCE_FLOOR: f64 = 1e-6;
const REL_TOL: f64 = 1e-6;
const KMEANS_INIT_ITERS: usize = 25;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GmmMeta {
    pub seed: u64,
    pub iterations: usize,
    /// Mean per-sample log-likelihood of each successive model, starting
    /// from the k-means initialization.
    pub log_likelihood: Vec<f64>,
    /// Variance entries clamped to the floor in the final model.
    pub floored: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    /// Row-major `k x dim`.
    pub means: Vec<f64>,
    /// Row-major `k x dim`, every entry >= [`VARIANCE_FLOOR`].
    pub variances: Vec<f64>,
    pub meta: GmmMeta,
}

impl GmmModel {
    pub fn new(dim: usize, weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || dim == 0 || means.len() != k * dim || variances.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                actual: means.len().max(variances.len()),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("GMM weights must be positive and sum to 1".into()));
        }
        if variances.iter().any(|&v| !(v >= VARIANCE_FLOOR) || !v.is_finite()) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("GMM variances below floor or non-finite parameters".into()));
        }
        Ok(Self {
            k,
            dim,
            weights,
            means,
            variances,
            meta: GmmMeta::default(),
        })
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    fn log_norms(&self) -> Vec<f64> {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        (0..self.k)
            .map(|k| {
                let logdet: f64 = self.variance(k).iter().map(|v| v.ln()).sum();
                self.weights[k].ln() - 0.5 * (self.dim as f64 * ln2pi + logdet)
            })
            .collect()
    }

    /// Posterior responsibilities of `x` (written into `out`), returning the
    /// log-likelihood of `x`.
    pub fn posteriors(&self, x: &[f32], out: &mut [f64]) -> f64 {
        self.posteriors_with(x, out, &self.log_norms())
    }

    fn posteriors_with(&self, x: &[f32], out: &mut [f64], log_norms: &[f64]) -> f64 {
        for k in 0..self.k {
            let m = self.mean(k);
            let v = self.variance(k);
            let q: f64 = x
                .iter()
                .zip(m)
                .zip(v)
                .map(|((&xi, &mi), &vi)| {
                    let d = xi as f64 - mi;
                    d * d / vi
                })
                .sum();
            out[k] = log_norms[k] - 0.5 * q;
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = out.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        for o in out.iter_mut() {
            *o = (*o - lse).exp();
        }
        lse
    }
}

struct Stats {
    nk: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
    ll: f64,
}

fn e_step(model: &GmmModel, data: &[f32]) -> Stats {
    let (k, dim) = (model.k, model.dim);
    let log_norms = model.log_norms();
    let init = || Stats {
        nk: vec![0.0; k],
        sx: vec![0.0; k * dim],
        sxx: vec![0.0; k * dim],
        ll: 0.0,
    };
    data.par_chunks(dim * 256)
        .map(|block| {
            let mut s = init();
            let mut post = vec![0.0; k];
            for x in block.chunks_exact(dim) {
                s.ll += model.posteriors_with(x, &mut post, &log_norms);
                for (c, &g) in post.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    s.nk[c] += g;
                    for (j, &xi) in x.iter().enumerate() {
                        let xi = xi as f64;
                        s.sx[c * dim + j] += g * xi;
                        s.sxx[c * dim + j] += g * xi * xi;
                    }
                }
            }
            s
        })
        .reduce(init, |mut a, b| {
            a.ll += b.ll;
            a.nk.iter_mut().zip(&b.nk).for_each(|(x, y)| *x += y);
            a.sx.iter_mut().zip(&b.sx).for_each(|(x, y)| *x += y);
            a.sxx.iter_mut().zip(&b.sxx).for_each(|(x, y)| *x += y);
            a
        })
}

/// Returns the number of floored variance entries.
fn m_step(model: &mut GmmModel, s: &Stats, n: usize) -> usize {
    let dim = model.dim;
    let mut floored = 0;
    for c in 0..model.k {
        let nk = s.nk[c];
        if nk < 1e-10 {
            // starved component: keep its parameters, give it a negligible weight
            model.weights[c] = 1e-10;
            log::warn!("GMM component {c} received no mass");
            continue;
        }
        model.weights[c] = nk / n as f64;
        for j in 0..dim {
            let mean = s.sx[c * dim + j] / nk;
            let var = s.sxx[c * dim + j] / nk - mean * mean;
            model.means[c * dim + j] = mean;
            model.variances[c * dim + j] = if var < VARIANCE_FLOOR {
                floored += 1;
                VARIANCE_FLOOR
            } else {
                var
            };
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
    floored
}

/// EM from a k-means initialization. Requires at least `10 * k` rows.
pub fn learn_gmm(data: &[f32], dim: usize, k: usize, seed: u64, max_iters: usize) -> Result<GmmModel> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: data.len(),
        });
    }
    let n = data.len() / dim;
    if k == 0 || n < 10 * k {
        return Err(Error::InvalidParameter(format!(
            "GMM with k = {k} needs at least {} rows, got {n}",
            10 * k
        )));
    }
    let cb = learn_codebook_kmeans(data, dim, k, seed, KMEANS_INIT_ITERS)?;

    // initial parameters from hard k-means assignments
    let mut model = GmmModel {
        k,
        dim,
        weights: vec![1.0 / k as f64; k],
        means: cb.centroids.iter().map(|&v| v as f64).collect(),
        variances: vec![1.0; k * dim],
        meta: GmmMeta {
            seed,
            ..Default::default()
        },
    };
    let mut hard = Stats {
        nk: vec![0.0; k],
        sx: vec![0.0; k * dim],
        sxx: vec![0.0; k * dim],
        ll: 0.0,
    };
    for x in data.chunks_exact(dim) {
        let (c, _) = cb.nearest(x);
        hard.nk[c] += 1.0;
        for (j, &xi) in x.iter().enumerate() {
            hard.sx[c * dim + j] += xi as f64;
            hard.sxx[c * dim + j] += xi as f64 * xi as f64;
        }
    }
    m_step(&mut model, &hard, n);

    let mut floored = 0;
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        let stats = e_step(&model, data);
        let ll = stats.ll / n as f64;
        let prev = model.meta.log_likelihood.last().copied();
        model.meta.log_likelihood.push(ll);
        if let Some(prev) = prev {
            if (ll - prev).abs() <= REL_TOL * prev.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
        floored = m_step(&mut model, &stats, n);
        model.meta.iterations += 1;
    }
    if !converged {
        let ll = e_step(&model, data).ll / n as f64;
        model.meta.log_likelihood.push(ll);
    }
    if floored > 0 {
        log::warn!("GMM: {floored} variance entries clamped to {VARIANCE_FLOOR}");
    }
    model.meta.floored = floored;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut out = Vec::new();
        for center in [0.0, 10.0] {
            for _ in 0..300 {
                out.push((center + noise.sample(&mut rng)) as f32);
                out.push((center + noise.sample(&mut rng)) as f32);
            }
        }
        out
    }

    #[test]
    fn two_blobs() {
        let g = learn_gmm(&blobs(1), 2, 2, 3, 100).unwrap();
        let mut comps: Vec<usize> = (0..2).collect();
        comps.sort_by(|&a, &b| g.mean(a)[0].total_cmp(&g.mean(b)[0]));
        for (&c, truth) in comps.iter().zip([0.0, 10.0]) {
            assert!(g.mean(c).iter().all(|m| (m - truth).abs() < 0.1), "{:?}", g.mean(c));
            assert!((g.weights[c] - 0.5).abs() < 1e-6);
        }
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_component_is_closed_form() {
        let data = blobs(2);
        let g = learn_gmm(&data, 2, 1, 0, 10).unwrap();
        let n = data.len() as f64 / 2.0;
        for j in 0..2 {
            let mean: f64 = data.iter().skip(j).step_by(2).map(|&v| v as f64).sum::<f64>() / n;
            let var: f64 = data.iter().skip(j).step_by(2).map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!((g.mean(0)[j] - mean).abs() < 1e-9);
            assert!((g.variance(0)[j] - var).abs() < 1e-6);
        }
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn log_likelihood_non_decreasing() {
        let mut data = blobs(5);
        data.extend(blobs(6).iter().map(|v| v * 0.5 + 3.0));
        let g = learn_gmm(&data, 2, 4, 9, 200).unwrap();
        for w in g.meta.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", g.meta.log_likelihood);
        }
    }

    #[test]
    fn deterministic_and_floored() {
        let data = blobs(7);
        assert_eq!(learn_gmm(&data, 2, 3, 4, 50).unwrap(), learn_gmm(&data, 2, 3, 4, 50).unwrap());

        // a constant coordinate has zero variance and must be floored
        let flat: Vec<f32> = blobs(8).chunks(2).flat_map(|r| [r[0], 5.0]).collect();
        let g = learn_gmm(&flat, 2, 2, 1, 20).unwrap();
        assert!(g.meta.floored > 0);
        assert!(g.variances.iter().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn needs_ten_rows_per_component() {
        let data: Vec<f32> = (0..38).map(|i| i as f32).collect();
        assert!(learn_gmm(&data, 2, 2, 0, 5).is_err());
    }
}
