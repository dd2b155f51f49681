//! Rotation-invariant uniform (riu2) local binary patterns on a circular
//! neighbourhood with bilinear interpolation.

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_SAMPLES: usize = 16;

/// Number of riu2 bins for `samples` neighbours: `samples + 1` uniform codes
/// plus one bin for all non-uniform patterns.
pub const fn riu2_bins(samples: usize) -> usize {
    samples + 2
}

/// Circular sample offsets `(dx, dy)`, counter-clockwise from the +x axis
/// (image y grows downwards). When `samples` is a multiple of four the
/// other quadrants are generated by exact 90-degree rotation of the first.
pub fn sample_offsets(radius: f64, samples: usize) -> Vec<(f64, f64)> {
    let snap = |v: f64| {
        let r = (v * 1e9).round() / 1e9;
        if r == 0.0 {
            0.0
        } else {
            r
        }
    };
    let at = |p: usize| {
        let theta = 2.0 * std::f64::consts::PI * p as f64 / samples as f64;
        (snap(radius * theta.cos()), snap(-radius * theta.sin()))
    };
    if samples % 4 != 0 {
        return (0..samples).map(at).collect();
    }
    let quarter = samples / 4;
    let first: Vec<(f64, f64)> = (0..quarter).map(at).collect();
    let mut out = Vec::with_capacity(samples);
    for q in 0..4 {
        for &(dx, dy) in &first {
            // rotate by q * 90 degrees counter-clockwise in image coordinates
            let (mut x, mut y) = (dx, dy);
            for _ in 0..q {
                (x, y) = (y, -x);
            }
            out.push((x + 0.0, y + 0.0));
        }
    }
    out
}

#[inline]
fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as usize, y0 as usize);
    let p00 = img.get(xi, yi);
    if fx == 0.0 && fy == 0.0 {
        return p00;
    }
    let x1 = if fx > 0.0 { xi + 1 } else { xi };
    let y1 = if fy > 0.0 { yi + 1 } else { yi };
    let p01 = img.get(x1, yi);
    let p10 = img.get(xi, y1);
    let p11 = img.get(x1, y1);
    let top = p00 + fx * (p01 - p00);
    let bottom = p10 + fx * (p11 - p10);
    top + fy * (bottom - top)
}

/// riu2 code of a binary pattern given as a bit vector (bit p = neighbour p).
pub fn riu2_code(bits: &[bool]) -> usize {
    let n = bits.len();
    let transitions = (0..n).filter(|&i| bits[i] != bits[(i + 1) % n]).count();
    if transitions <= 2 {
        bits.iter().filter(|&&b| b).count()
    } else {
        n + 1
    }
}

/// riu2 code image over the valid region (pixels at least `radius` from
/// every border). Returns `(codes, valid_width, valid_height)`.
pub fn lbp_codes(img: &GrayImage, radius: usize, samples: usize) -> Result<(Vec<u8>, usize, usize)> {
    let min = 2 * radius + 1;
    if img.width() < min || img.height() < min {
        return Err(Error::ImageTooSmall {
            kind: "lbp".into(),
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let offsets = sample_offsets(radius as f64, samples);
    let vw = img.width() - 2 * radius;
    let vh = img.height() - 2 * radius;
    let mut codes = Vec::with_capacity(vw * vh);
    let mut bits = vec![false; samples];
    for y in radius..img.height() - radius {
        for x in radius..img.width() - radius {
            let center = img.get(x, y);
            for (b, &(dx, dy)) in bits.iter_mut().zip(&offsets) {
                *b = bilinear(img, x as f64 + dx, y as f64 + dy) >= center;
            }
            codes.push(riu2_code(&bits) as u8);
        }
    }
    Ok((codes, vw, vh))
}

/// Histogram of riu2 codes over all valid pixels (counts, not normalized).
pub fn lbp_histogram(img: &GrayImage, radius: usize, samples: usize) -> Result<Vec<f64>> {
    let (codes, _, _) = lbp_codes(img, radius, samples)?;
    let mut h = vec![0.0; riu2_bins(samples)];
    for c in codes {
        h[c as usize] += 1.0;
    }
    Ok(h)
}
