//! Global hand-crafted descriptors.

pub mod gabor;
pub mod glcm;
pub mod granulometry;
pub mod histogram;
pub mod hog;
pub mod lbp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_grayscale, RgbImage};
use crate::vector::{DescriptorKind, FeatureVector};

pub use gabor::GaborBankParams;
pub use glcm::GlcmStats;
pub use hog::HogParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GlobalKind {
    HistL,
    HistHV,
    HistRgb,
    HistRgbNorm,
    SpatialHistRgb,
    CoOcc,
    GaborL,
    GaborRgb,
    OppGaborRgb,
    Hog,
    Granulometry,
    LbpL,
    LbpRgb,
}

impl GlobalKind {
    pub const ALL: [GlobalKind; 13] = [
        GlobalKind::HistL,
        GlobalKind::HistHV,
        GlobalKind::HistRgb,
        GlobalKind::HistRgbNorm,
        GlobalKind::SpatialHistRgb,
        GlobalKind::CoOcc,
        GlobalKind::GaborL,
        GlobalKind::GaborRgb,
        GlobalKind::OppGaborRgb,
        GlobalKind::Hog,
        GlobalKind::Granulometry,
        GlobalKind::LbpL,
        GlobalKind::LbpRgb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GlobalKind::HistL => "hist_l",
            GlobalKind::HistHV => "hist_hv",
            GlobalKind::HistRgb => "hist_rgb",
            GlobalKind::HistRgbNorm => "hist_rgbn",
            GlobalKind::SpatialHistRgb => "spatial_hist_rgb",
            GlobalKind::CoOcc => "cooc",
            GlobalKind::GaborL => "gabor_l",
            GlobalKind::GaborRgb => "gabor_rgb",
            GlobalKind::OppGaborRgb => "opp_gabor_rgb",
            GlobalKind::Hog => "hog",
            GlobalKind::Granulometry => "granulometry",
            GlobalKind::LbpL => "lbp_l",
            GlobalKind::LbpRgb => "lbp_rgb",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn default_dim(self) -> usize {
        self.dim(&GlobalParams::default())
    }

    pub fn dim(self, params: &GlobalParams) -> usize {
        let lbp = lbp::riu2_bins(params.lbp_samples);
        match self {
            GlobalKind::HistL => 256,
            GlobalKind::HistHV => 512,
            GlobalKind::HistRgb | GlobalKind::HistRgbNorm => 768,
            GlobalKind::SpatialHistRgb => 1536,
            GlobalKind::CoOcc => 5,
            GlobalKind::GaborL => params.gabor.gabor_dim(1),
            GlobalKind::GaborRgb => params.gabor.gabor_dim(3),
            GlobalKind::OppGaborRgb => params.gabor.opponent_dim(),
            GlobalKind::Hog => params.hog.dim(),
            GlobalKind::Granulometry => 3 * 2 * granulometry::N_SIZES,
            GlobalKind::LbpL => lbp,
            GlobalKind::LbpRgb => 3 * lbp,
        }
    }
}

/// Kind-specific extraction parameters. Defaults reproduce the published
/// descriptor lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub cooc_levels: usize,
    pub gabor: GaborBankParams,
    pub hog: HogParams,
    pub lbp_radius: usize,
    pub lbp_samples: usize,
}

impl Default for GlobalParams {
    fn default() -> Self {
        Self {
            cooc_levels: glcm::DEFAULT_LEVELS,
            gabor: GaborBankParams::default(),
            hog: HogParams::default(),
            lbp_radius: lbp::DEFAULT_RADIUS,
            lbp_samples: lbp::DEFAULT_SAMPLES,
        }
    }
}

fn name_error(kind: GlobalKind, e: Error) -> Error {
    match e {
        Error::ImageTooSmall {
            width, height, min, ..
        } => Error::ImageTooSmall {
            kind: kind.name().to_string(),
            width,
            height,
            min,
        },
        other => other,
    }
}

/// Raw (unnormalized) descriptor values.
pub fn extract_global_raw(img: &RgbImage, kind: GlobalKind, params: &GlobalParams) -> Result<Vec<f64>> {
    let raw = match kind {
        GlobalKind::HistL => histogram::hist_l(img),
        GlobalKind::HistHV => histogram::hist_hv(img),
        GlobalKind::HistRgb => histogram::hist_rgb(img),
        GlobalKind::HistRgbNorm => histogram::hist_rgbn(img),
        GlobalKind::SpatialHistRgb => histogram::spatial_hist_rgb(img),
        GlobalKind::CoOcc => {
            let mut acc = [0.0; 5];
            for plane in img.channels() {
                let s = glcm::glcm_stats(&plane, params.cooc_levels, &glcm::DEFAULT_OFFSETS)?;
                for (a, v) in acc.iter_mut().zip(s.to_array()) {
                    *a += v / 3.0;
                }
            }
            acc.to_vec()
        }
        GlobalKind::GaborL => gabor::gabor_bank_stats(&to_grayscale(img), &params.gabor)?,
        GlobalKind::GaborRgb => {
            let mut out = Vec::with_capacity(params.gabor.gabor_dim(3));
            for plane in img.channels() {
                out.extend(gabor::gabor_bank_stats(&plane, &params.gabor)?);
            }
            out
        }
        GlobalKind::OppGaborRgb => gabor::opponent_gabor(&img.channels(), &params.gabor)?,
        GlobalKind::Hog => hog::hog(&to_grayscale(img), &params.hog)?,
        GlobalKind::Granulometry => granulometry::granulometry(img)?,
        GlobalKind::LbpL => {
            lbp::lbp_histogram(&to_grayscale(img), params.lbp_radius, params.lbp_samples)?
        }
        GlobalKind::LbpRgb => {
            let mut out = Vec::new();
            for plane in img.channels() {
                out.extend(lbp::lbp_histogram(&plane, params.lbp_radius, params.lbp_samples)?);
            }
            out
        }
    };
    debug_assert_eq!(raw.len(), kind.dim(params));
    Ok(raw)
}

/// Extracts and L2-normalizes one global descriptor.
pub fn extract_global(
    image_id: u32,
    img: &RgbImage,
    kind: GlobalKind,
    params: &GlobalParams,
) -> Result<FeatureVector> {
    let raw = extract_global_raw(img, kind, params).map_err(|e| name_error(kind, e))?;
    FeatureVector::from_raw(image_id, DescriptorKind::Global(kind), &raw)
}
