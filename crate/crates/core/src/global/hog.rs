//! Histogram of oriented gradients over a coarse grid of cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogParams {
    pub cells_x: usize,
    pub cells_y: usize,
    /// Unsigned orientation bins over `[0, pi)`.
    pub bins: usize,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cells_x: 3,
            cells_y: 3,
            bins: 9,
        }
    }
}

impl HogParams {
    pub fn dim(&self) -> usize {
        self.cells_x * self.cells_y * self.bins
    }
}

/// Central-difference gradients (clamped at the border) as `(magnitude, angle in [0, pi))`.
pub(crate) fn gradient(img: &GrayImage, x: usize, y: usize) -> (f64, f64) {
    let (xi, yi) = (x as isize, y as isize);
    let gx = img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi);
    let gy = img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1);
    let mag = (gx * gx + gy * gy).sqrt();
    let angle = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
    (mag, angle % std::f64::consts::PI)
}

/// Concatenated per-cell orientation histograms; each pixel votes its
/// gradient magnitude, split linearly between the two nearest bins.
pub fn hog(img: &GrayImage, params: &HogParams) -> Result<Vec<f64>> {
    if params.cells_x == 0 || params.cells_y == 0 || params.bins == 0 {
        return Err(Error::InvalidParameter("HOG grid and bins must be positive".into()));
    }
    let min = params.cells_x.max(params.cells_y);
    if img.width() < params.cells_x || img.height() < params.cells_y {
        return Err(Error::ImageTooSmall {
            kind: "hog".into(),
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let bins = params.bins;
    let bin_width = std::f64::consts::PI / bins as f64;
    let mut out = vec![0.0; params.dim()];
    for y in 0..img.height() {
        let cy = y * params.cells_y / img.height();
        for x in 0..img.width() {
            let cx = x * params.cells_x / img.width();
            let (mag, angle) = gradient(img, x, y);
            if mag == 0.0 {
                continue;
            }
            let pos = angle / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as isize).rem_euclid(bins as isize) as usize;
            let b1 = (b0 + 1) % bins;
            let base = (cy * params.cells_x + cx) * bins;
            out[base + b0] += mag * (1.0 - frac);
            out[base + b1] += mag * frac;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_81() {
        let img = GrayImage::from_fn(30, 30, |x, y| (x * y) as f64);
        assert_eq!(hog(&img, &HogParams::default()).unwrap().len(), 81);
        let p = HogParams {
            cells_x: 4,
            cells_y: 2,
            bins: 6,
        };
        assert_eq!(hog(&img, &p).unwrap().len(), 48);
    }

    #[test]
    fn flat_image_has_no_gradient_energy() {
        let img = GrayImage::filled(12, 12, 7.0);
        assert!(hog(&img, &HogParams::default()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_edge_votes_horizontal_gradient_bins() {
        let img = GrayImage::from_fn(18, 18, |x, _| if x < 9 { 0.0 } else { 100.0 });
        let h = hog(&img, &HogParams::default()).unwrap();
        let total: f64 = h.iter().sum();
        // angle 0 sits on the boundary between the first and last bins
        let horizontal: f64 = h.chunks(9).map(|c| c[0] + c[8]).sum();
        assert!((horizontal - total).abs() < 1e-9);
    }
}
