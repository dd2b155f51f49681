//! BoVW, VLAD and Fisher-vector aggregation. The returned vectors are raw;
//! callers L2-normalize them into feature vectors.

use super::{Codebook, GmmModel, LocalDescriptorSet};
use crate::error::{Error, Result};

fn check(descs: &LocalDescriptorSet, dim: usize) -> Result<()> {
    if descs.is_empty() {
        return Err(Error::Empty("local descriptor set".into()));
    }
    if descs.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: descs.dim,
        });
    }
    Ok(())
}

/// Signed square root, the power normalization applied before L2.
#[inline]
pub fn signed_sqrt(v: f64) -> f64 {
    v.signum() * v.abs().sqrt()
}

/// Hard-assignment word counts (K bins).
pub fn encode_bovw(descs: &LocalDescriptorSet, cb: &Codebook) -> Result<Vec<f64>> {
    check(descs, cb.dim)?;
    let mut h = vec![0.0; cb.k];
    for x in descs.rows() {
        h[cb.nearest(x).0] += 1.0;
    }
    Ok(h)
}

/// Per-centroid sums of residuals `x - c`, power-normalized (K * D values).
pub fn encode_vlad(descs: &LocalDescriptorSet, cb: &Codebook) -> Result<Vec<f64>> {
    check(descs, cb.dim)?;
    let dim = cb.dim;
    let mut v = vec![0.0; cb.k * dim];
    for x in descs.rows() {
        let (c, _) = cb.nearest(x);
        for ((acc, &xi), &ci) in v[c * dim..(c + 1) * dim].iter_mut().zip(x).zip(cb.centroid(c)) {
            *acc += xi as f64 - ci as f64;
        }
    }
    v.iter_mut().for_each(|x| *x = signed_sqrt(*x));
    Ok(v)
}

/// Fisher-vector gradients before any normalization.
///
/// Layout per component `k`: `D` mean gradients followed by `D` variance
/// gradients,
/// `G_mu = sum_t g_t (x_t - mu) / sigma / (N sqrt(w))` and
/// `G_sigma = sum_t g_t ((x_t - mu)^2 / sigma^2 - 1) / (N sqrt(2 w))`.
pub fn fisher_gradients(descs: &LocalDescriptorSet, gmm: &GmmModel) -> Result<Vec<f64>> {
    check(descs, gmm.dim)?;
    let dim = gmm.dim;
    let n = descs.len() as f64;
    let mut out = vec![0.0; 2 * gmm.k * dim];
    let mut post = vec![0.0; gmm.k];
    let sigmas: Vec<f64> = gmm.variances.iter().map(|v| v.sqrt()).collect();
    for x in descs.rows() {
        gmm.posteriors(x, &mut post);
        for (k, &g) in post.iter().enumerate() {
            if g < 1e-12 {
                continue;
            }
            let mean = gmm.mean(k);
            let sig = &sigmas[k * dim..(k + 1) * dim];
            let block = &mut out[2 * k * dim..2 * (k + 1) * dim];
            let (gm, gs) = block.split_at_mut(dim);
            for j in 0..dim {
                let z = (x[j] as f64 - mean[j]) / sig[j];
                gm[j] += g * z;
                gs[j] += g * (z * z - 1.0);
            }
        }
    }
    for k in 0..gmm.k {
        let w = gmm.weights[k];
        let sm = 1.0 / (n * w.sqrt());
        let ss = 1.0 / (n * (2.0 * w).sqrt());
        let block = &mut out[2 * k * dim..2 * (k + 1) * dim];
        block[..dim].iter_mut().for_each(|v| *v *= sm);
        block[dim..].iter_mut().for_each(|v| *v *= ss);
    }
    Ok(out)
}

/// Power-normalized Fisher vector (2 * K * D values).
pub fn encode_fisher(descs: &LocalDescriptorSet, gmm: &GmmModel) -> Result<Vec<f64>> {
    let mut v = fisher_gradients(descs, gmm)?;
    v.iter_mut().for_each(|x| *x = signed_sqrt(*x));
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::kmeans::nearest_f32;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn set(dim: usize, data: Vec<f32>) -> LocalDescriptorSet {
        LocalDescriptorSet::new(0, dim, data).unwrap()
    }

    fn random_codebook(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Codebook {
        let c = (0..k * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Codebook::from_centroids(dim, c).unwrap()
    }

    #[test]
    fn bovw_one_hot_and_counts() {
        let cb = Codebook::from_centroids(2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let h = encode_bovw(&set(2, vec![3.0, 3.0, 3.0, 3.0, 3.0, 3.0]), &cb).unwrap();
        assert_eq!(h, vec![0.0, 0.0, 0.0, 3.0]);
        let h = encode_bovw(&set(2, vec![0.1, 0.0, 2.9, 3.0, 1.2, 0.9, 0.0, 0.4]), &cb).unwrap();
        assert_eq!(h.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn bovw_matches_brute_force_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (k, dim) = (32, 8);
        let cb = random_codebook(&mut rng, k, dim);
        let data: Vec<f32> = (0..1000 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let descs = set(dim, data);
        let mut oracle = vec![0.0; k];
        for x in descs.rows() {
            // independent scan in f64
            let mut best = (0usize, f64::INFINITY);
            for c in 0..k {
                let d: f64 = (0..dim).map(|j| (x[j] as f64 - cb.centroid(c)[j] as f64).powi(2)).sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            assert_eq!(best.0, nearest_f32(x, &cb.centroids, dim).0);
            oracle[best.0] += 1.0;
        }
        assert_eq!(encode_bovw(&descs, &cb).unwrap(), oracle);
    }

    #[test]
    fn vlad_zero_and_single_residual() {
        let cb = Codebook::from_centroids(2, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        let v = encode_vlad(&set(2, vec![0.0, 0.0, 10.0, 10.0]), &cb).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));

        let v = encode_vlad(&set(2, vec![10.25, 9.0]), &cb).unwrap();
        assert_eq!(v[..2], [0.0, 0.0]);
        assert!((v[2] - 0.5).abs() < 1e-12);
        assert!((v[3] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn encoders_are_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 4;
        let cb = random_codebook(&mut rng, 6, dim);
        let gmm = GmmModel::new(dim, vec![0.25; 4], (0..16).map(|i| i as f64 * 0.1).collect(), vec![0.5; 16]).unwrap();
        let rows: Vec<Vec<f32>> = (0..40).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut shuffled = rows.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let a = set(dim, rows.concat());
        let b = set(dim, shuffled.concat());
        assert_eq!(encode_bovw(&a, &cb).unwrap(), encode_bovw(&b, &cb).unwrap());
        for (x, y) in encode_vlad(&a, &cb).unwrap().iter().zip(encode_vlad(&b, &cb).unwrap()) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in encode_fisher(&a, &gmm).unwrap().iter().zip(encode_fisher(&b, &gmm).unwrap()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn fisher_mean_gradient_vanishes_at_the_component() {
        // Samples drawn from component 0 itself: each G_mu coordinate is
        // (1/sqrt(w)) * mean of standard normals, so |G_mu| <= 3/sqrt(n w)
        // with overwhelming probability.
        let dim = 3;
        let gmm = GmmModel::new(
            dim,
            vec![0.5, 0.5],
            vec![0.0, 1.0, -2.0, 50.0, 50.0, 50.0],
            vec![0.25, 1.0, 4.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 4000;
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::new();
        for _ in 0..n {
            for j in 0..dim {
                let z: f64 = std_normal.sample(&mut rng);
                data.push((gmm.mean(0)[j] + z * gmm.variance(0)[j].sqrt()) as f32);
            }
        }
        let g = fisher_gradients(&set(dim, data), &gmm).unwrap();
        let bound = 3.0 / (n as f64 * 0.5).sqrt();
        for j in 0..dim {
            assert!(g[j].abs() < bound, "G_mu[{j}] = {}", g[j]);
        }
        // the far component gets no mass at all
        assert!(g[2 * dim..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fisher_is_finite_for_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 5;
        let gmm = GmmModel::new(dim, vec![0.5, 0.5], vec![0.0; 10], vec![1e-6; 10]).unwrap();
        let data = (0..50 * dim).map(|_| rng.random_range(-100.0..100.0)).collect();
        let v = encode_fisher(&set(dim, data), &gmm).unwrap();
        assert_eq!(v.len(), 20);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn empty_sets_are_rejected() {
        let cb = Codebook::from_centroids(2, vec![0.0, 0.0]).unwrap();
        let empty = LocalDescriptorSet::new(0, 2, vec![]).unwrap();
        assert!(encode_bovw(&empty, &cb).is_err());
        assert!(encode_vlad(&empty, &cb).is_err());
    }
}
