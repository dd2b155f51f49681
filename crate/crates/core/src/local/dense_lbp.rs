//! Dense RGB riu2-LBP patch descriptors.

use super::{KeypointGrid, LocalDescriptorSet};
use crate::error::Result;
use crate::global::lbp::{lbp_codes, riu2_bins, DEFAULT_RADIUS, DEFAULT_SAMPLES};
use crate::image::RgbImage;

pub const PATCH_DIM: usize = 3 * riu2_bins(DEFAULT_SAMPLES);

/// Per grid point, the 18-bin riu2 histogram of each RGB channel over the
/// `window x window` patch (pixels whose code is defined), concatenated.
pub fn dense_lbp_descriptors(
    image_id: u32,
    img: &RgbImage,
    grid: &KeypointGrid,
    window: usize,
) -> Result<LocalDescriptorSet> {
    let bins = riu2_bins(DEFAULT_SAMPLES);
    let r = DEFAULT_RADIUS;
    let planes = img
        .channels()
        .iter()
        .map(|p| lbp_codes(p, r, DEFAULT_SAMPLES))
        .collect::<Result<Vec<_>>>()?;
    let half = window / 2;
    let mut data = Vec::with_capacity(grid.len() * PATCH_DIM);
    for &(cx, cy) in &grid.points {
        let (x0, y0) = (cx - half, cy - half);
        for (codes, vw, vh) in &planes {
            let mut h = vec![0.0f32; bins];
            // code image starts at pixel (r, r)
            let xs = x0.max(r)..(x0 + window).min(r + vw);
            for y in y0.max(r)..(y0 + window).min(r + vh) {
                for x in xs.clone() {
                    h[codes[(y - r) * vw + (x - r)] as usize] += 1.0;
                }
            }
            data.extend(h);
        }
    }
    LocalDescriptorSet::new(image_id, PATCH_DIM, data)
}
