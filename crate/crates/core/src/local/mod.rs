//! Dense local descriptors and their aggregate encodings.

pub mod dense_lbp;
pub mod encode;
pub mod gmm;
pub mod grid;
pub mod kmeans;
pub mod sift;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_grayscale, RgbImage};
use crate::vector::{DescriptorKind, FeatureVector};

pub use encode::{encode_bovw, encode_fisher, encode_vlad, fisher_gradients};
pub use gmm::{learn_gmm, GmmModel};
pub use grid::{dense_keypoints, KeypointGrid};
pub use kmeans::{learn_codebook_kmeans, Codebook};

/// Row cap when sampling descriptors for codebook training.
pub const TRAINING_SAMPLE_CAP: usize = 200_000;
pub const DEFAULT_STEP: usize = 16;
pub const SIFT_PATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocalKind {
    /// BoVW of dense SIFT, 1024 words.
    DenseSift,
    /// VLAD of dense SIFT, 200 centroids.
    DenseSiftVlad,
    /// Fisher vector of dense SIFT, 160 components.
    DenseSiftFisher,
    /// BoVW of dense RGB riu2-LBP patches, 1024 words.
    DenseLbpRgb,
}

impl LocalKind {
    pub const ALL: [LocalKind; 4] = [
        LocalKind::DenseSift,
        LocalKind::DenseSiftVlad,
        LocalKind::DenseSiftFisher,
        LocalKind::DenseLbpRgb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LocalKind::DenseSift => "dense_sift",
            LocalKind::DenseSiftVlad => "dense_sift_vlad",
            LocalKind::DenseSiftFisher => "dense_sift_fv",
            LocalKind::DenseLbpRgb => "dense_lbp_rgb",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Number of codewords (or GMM components) at default settings.
    pub fn default_k(self) -> usize {
        match self {
            LocalKind::DenseSift | LocalKind::DenseLbpRgb => 1024,
            LocalKind::DenseSiftVlad => 200,
            LocalKind::DenseSiftFisher => 160,
        }
    }

    /// Dimension of the local descriptor being aggregated.
    pub fn descriptor_dim(self) -> usize {
        match self {
            LocalKind::DenseLbpRgb => dense_lbp::PATCH_DIM,
            _ => sift::SIFT_DIM,
        }
    }

    pub fn encoded_dim(self, k: usize) -> usize {
        match self {
            LocalKind::DenseSift | LocalKind::DenseLbpRgb => k,
            LocalKind::DenseSiftVlad => k * self.descriptor_dim(),
            LocalKind::DenseSiftFisher => 2 * k * self.descriptor_dim(),
        }
    }

    pub fn default_dim(self) -> usize {
        self.encoded_dim(self.default_k())
    }

    /// Container tag of the model this kind is encoded with.
    pub fn model_tag(self) -> &'static str {
        match self {
            LocalKind::DenseSiftFisher => gmm::GMM_TAG,
            _ => kmeans::KMEANS_TAG,
        }
    }
}

/// Local descriptors of one image, row-major `n_points x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDescriptorSet {
    pub image_id: u32,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl LocalDescriptorSet {
    pub fn new(image_id: u32, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { image_id, dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows with no energy (e.g. SIFT on a flat region).
    pub fn zero_rows(&self) -> Vec<bool> {
        self.rows().map(|r| r.iter().all(|&v| v == 0.0)).collect()
    }
}

/// Uniformly samples at most `cap` rows (without replacement) from the
/// concatenation of `sets`.
pub fn sample_rows(sets: &[LocalDescriptorSet], cap: usize, seed: u64) -> Result<Vec<f32>> {
    let dim = sets.first().map(|s| s.dim).ok_or_else(|| Error::Empty("descriptor sets".into()))?;
    if let Some(s) = sets.iter().find(|s| s.dim != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: s.dim,
        });
    }
    let total: usize = sets.iter().map(|s| s.len()).sum();
    let all = sets.iter().flat_map(|s| s.data.iter().copied());
    if total <= cap {
        return Ok(all.collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, total, cap).into_vec();
    picked.sort_unstable();
    let mut offsets = Vec::with_capacity(sets.len());
    let mut acc = 0;
    for s in sets {
        offsets.push(acc);
        acc += s.len();
    }
    let mut out = Vec::with_capacity(cap * dim);
    for i in picked {
        let set = offsets.partition_point(|&o| o <= i) - 1;
        out.extend_from_slice(sets[set].row(i - offsets[set]));
    }
    Ok(out)
}

/// Learned quantizer attached to a local kind.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalModel {
    Codebook(Codebook),
    Gmm(GmmModel),
}

/// Extraction settings for the dense local pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    pub step: usize,
    /// Patch side for dense LBP (16 or 30 in the reference setups).
    pub lbp_window: usize,
}

impl Default for LocalParams {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            lbp_window: 16,
        }
    }
}

/// Dense local descriptors for `kind`, before encoding.
pub fn describe(image_id: u32, img: &RgbImage, kind: LocalKind, params: &LocalParams) -> Result<LocalDescriptorSet> {
    match kind {
        LocalKind::DenseLbpRgb => {
            let grid = dense_keypoints(img.width(), img.height(), params.step, params.lbp_window)?;
            dense_lbp::dense_lbp_descriptors(image_id, img, &grid, params.lbp_window)
        }
        _ => {
            let grid = dense_keypoints(img.width(), img.height(), params.step, SIFT_PATCH)?;
            Ok(sift::dense_sift(image_id, &to_grayscale(img), &grid))
        }
    }
}

/// Encodes a descriptor set with the model matching `kind`.
pub fn encode(kind: LocalKind, descs: &LocalDescriptorSet, model: &LocalModel) -> Result<FeatureVector> {
    let raw = match (kind, model) {
        (LocalKind::DenseSift | LocalKind::DenseLbpRgb, LocalModel::Codebook(cb)) => encode_bovw(descs, cb)?,
        (LocalKind::DenseSiftVlad, LocalModel::Codebook(cb)) => encode_vlad(descs, cb)?,
        (LocalKind::DenseSiftFisher, LocalModel::Gmm(g)) => encode_fisher(descs, g)?,
        _ => {
            return Err(Error::InvalidParameter(format!(
                "{} cannot be encoded with this model type",
                kind.name()
            )))
        }
    };
    FeatureVector::from_raw(descs.image_id, DescriptorKind::Local(kind), &raw)
}

/// Full pipeline: dense description followed by encoding.
pub fn extract_local(
    image_id: u32,
    img: &RgbImage,
    kind: LocalKind,
    model: &LocalModel,
    params: &LocalParams,
) -> Result<FeatureVector> {
    let descs = describe(image_id, img, kind, params)?;
    encode(kind, &descs, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registered_dimensions() {
        assert_eq!(LocalKind::DenseSift.default_dim(), 1024);
        assert_eq!(LocalKind::DenseSiftVlad.default_dim(), 25600);
        assert_eq!(LocalKind::DenseSiftFisher.default_dim(), 40960);
        assert_eq!(LocalKind::DenseLbpRgb.default_dim(), 1024);
        assert_eq!(LocalKind::DenseLbpRgb.descriptor_dim(), 54);
    }

    #[test]
    fn sampling_caps_and_is_deterministic() {
        let sets: Vec<_> = (0..3)
            .map(|i| {
                let data = (0..20).map(|v| (i * 100 + v) as f32).collect();
                LocalDescriptorSet::new(i, 2, data).unwrap()
            })
            .collect();
        assert_eq!(sample_rows(&sets, 100, 1).unwrap().len(), 60);
        let a = sample_rows(&sets, 7, 9).unwrap();
        assert_eq!(a.len(), 14);
        assert_eq!(a, sample_rows(&sets, 7, 9).unwrap());
        // every sampled row is an original row
        for r in a.chunks(2) {
            assert_eq!(r[1], r[0] + 1.0);
            assert_eq!(r[0] as u32 % 2, 0);
        }
    }

    #[test]
    fn rejects_non_finite_rows() {
        assert!(LocalDescriptorSet::new(0, 2, vec![1.0, f32::NAN]).is_err());
        assert!(LocalDescriptorSet::new(0, 3, vec![1.0, 2.0]).is_err());
    }
}
