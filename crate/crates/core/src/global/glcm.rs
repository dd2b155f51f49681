//! Gray-level co-occurrence statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Offsets used by the `cooc` descriptor: horizontal, vertical and both diagonals.
pub const DEFAULT_OFFSETS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];
pub const DEFAULT_LEVELS: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GlcmStats {
    pub contrast: f64,
    pub correlation: f64,
    /// Angular second moment, `sum p^2`.
    pub energy: f64,
    /// Natural-log entropy.
    pub entropy: f64,
    /// Inverse difference moment, `sum p / (1 + (i-j)^2)`.
    pub homogeneity: f64,
}

impl GlcmStats {
    pub fn to_array(self) -> [f64; 5] {
        [
            self.contrast,
            self.correlation,
            self.energy,
            self.entropy,
            self.homogeneity,
        ]
    }

    fn scaled_add(&mut self, other: &GlcmStats, w: f64) {
        self.contrast += w * other.contrast;
        self.correlation += w * other.correlation;
        self.energy += w * other.energy;
        self.entropy += w * other.entropy;
        self.homogeneity += w * other.homogeneity;
    }
}

/// Quantizes `[0, 256)` intensities to `levels` uniform levels.
pub fn quantize(img: &GrayImage, levels: usize) -> Vec<usize> {
    img.as_slice()
        .iter()
        .map(|&v| ((v * levels as f64 / 256.0).floor().max(0.0) as usize).min(levels - 1))
        .collect()
}

/// Symmetrized co-occurrence probability matrix for one offset, or `None`
/// when the offset has no valid pixel pair.
pub fn cooccurrence(
    q: &[usize],
    width: usize,
    height: usize,
    levels: usize,
    (dx, dy): (isize, isize),
) -> Option<Vec<f64>> {
    let mut m = vec![0.0; levels * levels];
    let mut pairs = 0usize;
    for y in 0..height as isize {
        let y2 = y + dy;
        if y2 < 0 || y2 >= height as isize {
            continue;
        }
        for x in 0..width as isize {
            let x2 = x + dx;
            if x2 < 0 || x2 >= width as isize {
                continue;
            }
            let a = q[(y * width as isize + x) as usize];
            let b = q[(y2 * width as isize + x2) as usize];
            m[a * levels + b] += 1.0;
            m[b * levels + a] += 1.0;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return None;
    }
    let total = 2.0 * pairs as f64;
    m.iter_mut().for_each(|v| *v /= total);
    Some(m)
}

/// Statistics of a normalized co-occurrence matrix. Correlation is 0 when
/// either marginal has zero variance.
pub fn matrix_stats(p: &[f64], levels: usize) -> GlcmStats {
    let mut mean_i = 0.0;
    let mut mean_j = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let v = p[i * levels + j];
            mean_i += i as f64 * v;
            mean_j += j as f64 * v;
        }
    }
    let mut s = GlcmStats::default();
    let mut var_i = 0.0;
    let mut var_j = 0.0;
    let mut cov = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            let v = p[i * levels + j];
            if v == 0.0 {
                continue;
            }
            let d = i as f64 - j as f64;
            s.contrast += d * d * v;
            s.energy += v * v;
            s.entropy -= v * v.ln();
            s.homogeneity += v / (1.0 + d * d);
            let (di, dj) = (i as f64 - mean_i, j as f64 - mean_j);
            var_i += di * di * v;
            var_j += dj * dj * v;
            cov += di * dj * v;
        }
    }
    let denom = (var_i * var_j).sqrt();
    s.correlation = if denom > 1e-12 { cov / denom } else { 0.0 };
    s
}

/// Co-occurrence statistics averaged over `offsets`.
pub fn glcm_stats(img: &GrayImage, levels: usize, offsets: &[(isize, isize)]) -> Result<GlcmStats> {
    if levels < 2 {
        return Err(Error::InvalidParameter(format!("GLCM needs >= 2 levels, got {levels}")));
    }
    if offsets.is_empty() {
        return Err(Error::InvalidParameter("GLCM needs at least one offset".into()));
    }
    let q = quantize(img, levels);
    let mats: Vec<Vec<f64>> = offsets
        .iter()
        .filter_map(|&o| cooccurrence(&q, img.width(), img.height(), levels, o))
        .collect();
    if mats.is_empty() {
        return Err(Error::ImageTooSmall {
            kind: "cooc".into(),
            width: img.width(),
            height: img.height(),
            min: 2,
        });
    }
    let mut acc = GlcmStats::default();
    let w = 1.0 / mats.len() as f64;
    for m in &mats {
        acc.scaled_add(&matrix_stats(m, levels), w);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image() {
        let img = GrayImage::filled(6, 6, 100.0);
        let s = glcm_stats(&img, 32, &DEFAULT_OFFSETS).unwrap();
        assert_eq!(s.contrast, 0.0);
        assert!((s.energy - 1.0).abs() < 1e-12);
        assert_eq!(s.entropy, 0.0);
        assert!((s.homogeneity - 1.0).abs() < 1e-12);
        assert_eq!(s.correlation, 0.0);
    }

    #[test]
    fn checkerboard_2x2() {
        // Hand-enumerated: both horizontal pairs are (0,1)/(1,0); after
        // symmetrization p(0,1) = p(1,0) = 1/2.
        let img = GrayImage::new(2, 2, vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let s = glcm_stats(&img, 2, &[(1, 0)]).unwrap();
        assert!((s.contrast - 1.0).abs() < 1e-12);
        assert!((s.energy - 0.5).abs() < 1e-12);
        assert!((s.entropy - 2f64.ln()).abs() < 1e-12);
        assert!((s.homogeneity - 0.5).abs() < 1e-12);
        assert!((s.correlation + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = GrayImage::filled(4, 4, 0.0);
        assert!(glcm_stats(&img, 1, &DEFAULT_OFFSETS).is_err());
        assert!(glcm_stats(&img, 8, &[]).is_err());
        let one = GrayImage::filled(1, 1, 0.0);
        assert!(matches!(
            glcm_stats(&one, 8, &DEFAULT_OFFSETS),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn stat_bounds(pixels in proptest::collection::vec(0.0f64..256.0, 64), levels in 2usize..16) {
            let img = GrayImage::new(8, 8, pixels.clone()).unwrap();
            let s = glcm_stats(&img, levels, &DEFAULT_OFFSETS).unwrap();
            proptest::prop_assert!(s.energy > 0.0 && s.energy <= 1.0 + 1e-12);
            proptest::prop_assert!(s.entropy >= 0.0);
            proptest::prop_assert!(s.entropy <= ((levels * levels) as f64).ln() + 1e-12);
            proptest::prop_assert!(s.homogeneity > 0.0 && s.homogeneity <= 1.0 + 1e-12);
            proptest::prop_assert!(s.correlation.abs() <= 1.0 + 1e-9);
            let q = quantize(&img, levels);
            let constant = q.iter().all(|&v| v == q[0]);
            proptest::prop_assert_eq!((s.energy - 1.0).abs() < 1e-12, constant);
        }
    }
}
