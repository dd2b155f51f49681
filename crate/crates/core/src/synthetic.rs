//! Synthetic feature tables for experiments and tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::feedback::FeedbackOracle;
use crate::store::FeatureTable;
use crate::vector::DescriptorKind;

/// Isotropic Gaussian classes with centers on scaled coordinate axes, so
/// every pair of centers is `center_distance` apart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub sigma: f64,
    pub center_distance: f64,
    /// Added to every coordinate; negative results are clamped to 0 so the
    /// table suits histogram measures.
    pub offset: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n_classes: 3,
            per_class: 50,
            dim: 10,
            sigma: 0.3,
            center_distance: 5.0,
            offset: 2.0,
        }
    }
}

/// Samples a table (ids grouped by class) and its class oracle.
pub fn gaussian_blobs(spec: &BlobSpec, seed: u64) -> (FeatureTable, FeedbackOracle) {
    assert!(spec.n_classes <= spec.dim, "one axis per class");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma).expect("finite sigma");
    let scale = spec.center_distance / std::f64::consts::SQRT_2;
    let mut t = FeatureTable::new("synthetic", DescriptorKind::External("blobs".into()), spec.dim).expect("dim > 0");
    let mut labels = Vec::with_capacity(spec.n_classes * spec.per_class);
    let mut id = 0u32;
    for c in 0..spec.n_classes {
        for _ in 0..spec.per_class {
            let row: Vec<f32> = (0..spec.dim)
                .map(|j| {
                    let center = if j == c { scale } else { 0.0 };
                    (center + spec.offset + noise.sample(&mut rng)).max(0.0) as f32
                })
                .collect();
            t.push(id, &row).expect("valid row");
            labels.push(c);
            id += 1;
        }
    }
    (t, FeedbackOracle::new(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let (t, o) = gaussian_blobs(&BlobSpec::default(), 5);
        assert_eq!((t.len(), t.dim(), o.len()), (150, 10, 150));
        assert!(t.min_value() >= 0.0);
        assert_eq!(gaussian_blobs(&BlobSpec::default(), 5).0, t);
        assert_eq!(o.class_of(149).unwrap(), 2);
        assert_eq!(o.ground_truth_size(0).unwrap(), 49);
    }
}
