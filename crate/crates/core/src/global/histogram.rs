//! Marginal color histograms. Bins are uniform over `[0, 256)` per channel.

use crate::image::{to_grayscale, RgbImage};

#[inline]
fn bin256(v: f64) -> usize {
    // luma of a gray pixel lands a few ulps below the integer
    ((v + 1e-9).floor().max(0.0) as usize).min(255)
}

/// 256-bin histogram of the luma plane.
pub fn hist_l(img: &RgbImage) -> Vec<f64> {
    let mut h = vec![0.0; 256];
    for &l in to_grayscale(img).as_slice() {
        h[bin256(l)] += 1.0;
    }
    h
}

/// Hue in degrees `[0, 360)` and value `[0, 255]`.
pub fn hue_value([r, g, b]: [u8; 3]) -> (f64, f64) {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (hue.rem_euclid(360.0), max)
}

/// 256 hue bins followed by 256 value bins.
pub fn hist_hv(img: &RgbImage) -> Vec<f64> {
    let mut h = vec![0.0; 512];
    for px in img.pixels() {
        let (hue, value) = hue_value(px);
        h[bin256(hue / 360.0 * 256.0)] += 1.0;
        h[256 + bin256(value)] += 1.0;
    }
    h
}

fn rgb_marginals(pixels: impl Iterator<Item = [u8; 3]>, out: &mut [f64]) {
    for px in pixels {
        for (c, &v) in px.iter().enumerate() {
            out[c * 256 + v as usize] += 1.0;
        }
    }
}

/// Concatenated R, G, B marginals (768 bins).
pub fn hist_rgb(img: &RgbImage) -> Vec<f64> {
    let mut h = vec![0.0; 768];
    rgb_marginals(img.pixels(), &mut h);
    h
}

/// Chromaticity `r = R/(R+G+B)` (and g, b); black pixels map to 1/3.
pub fn chromaticity([r, g, b]: [u8; 3]) -> [f64; 3] {
    let sum = r as f64 + g as f64 + b as f64;
    if sum == 0.0 {
        [1.0 / 3.0; 3]
    } else {
        [r as f64 / sum, g as f64 / sum, b as f64 / sum]
    }
}

/// Marginals of the normalized rgb chromaticities (768 bins).
pub fn hist_rgbn(img: &RgbImage) -> Vec<f64> {
    let mut h = vec![0.0; 768];
    for px in img.pixels() {
        for (c, v) in chromaticity(px).into_iter().enumerate() {
            h[c * 256 + bin256(v * 256.0)] += 1.0;
        }
    }
    h
}

/// RGB marginals of the top half followed by the bottom half (1536 bins).
pub fn spatial_hist_rgb(img: &RgbImage) -> Vec<f64> {
    let mut h = vec![0.0; 1536];
    let split = img.height() / 2;
    let w = img.width();
    let top = (0..split).flat_map(|y| (0..w).map(move |x| (x, y)));
    rgb_marginals(top.map(|(x, y)| img.pixel(x, y)), &mut h[..768]);
    let bottom = (split..img.height()).flat_map(|y| (0..w).map(move |x| (x, y)));
    rgb_marginals(bottom.map(|(x, y)| img.pixel(x, y)), &mut h[768..]);
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gray_has_single_bin() {
        let img = RgbImage::filled(8, 8, [128, 128, 128]);
        let h = hist_l(&img);
        assert_eq!(h.iter().filter(|&&v| v > 0.0).count(), 1);
        assert_eq!(h[128], 64.0);
    }

    #[test]
    fn hue_of_primaries() {
        assert_eq!(hue_value([255, 0, 0]), (0.0, 255.0));
        assert_eq!(hue_value([0, 255, 0]).0, 120.0);
        assert_eq!(hue_value([0, 0, 255]).0, 240.0);
        assert_eq!(hue_value([255, 0, 255]).0, 300.0);
        assert_eq!(hue_value([7, 7, 7]), (0.0, 7.0));
    }

    #[test]
    fn chromaticity_sums_to_one_and_handles_black() {
        assert_eq!(chromaticity([0, 0, 0]), [1.0 / 3.0; 3]);
        let c = chromaticity([10, 20, 70]);
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_masses() {
        let img = RgbImage::from_fn(6, 5, |x, y| [(x * 40) as u8, (y * 50) as u8, 255]);
        let n = 30.0;
        assert_eq!(hist_l(&img).iter().sum::<f64>(), n);
        assert_eq!(hist_hv(&img).iter().sum::<f64>(), 2.0 * n);
        assert_eq!(hist_rgb(&img).iter().sum::<f64>(), 3.0 * n);
        assert_eq!(hist_rgbn(&img).iter().sum::<f64>(), 3.0 * n);
        let s = spatial_hist_rgb(&img);
        // 5 rows: 2 on top, 3 at the bottom
        assert_eq!(s[..768].iter().sum::<f64>(), 3.0 * 12.0);
        assert_eq!(s[768..].iter().sum::<f64>(), 3.0 * 18.0);
    }
}
