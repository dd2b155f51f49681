//! Morphological granulometries with line structuring elements.
//!
//! A line of length `2k+1` is the `k`-fold Minkowski sum of the 3-pixel
//! line, so erosions and dilations are built incrementally. Pixels outside
//! the image are ignored (equivalent to padding with +inf for erosion and
//! -inf for dilation).

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

pub const N_SIZES: usize = 13;
/// Unit steps along 0, 45, 90 and 135 degrees (y grows downwards).
pub const ANGLE_STEPS: [(isize, isize); 4] = [(1, 0), (1, -1), (0, 1), (1, 1)];

/// Longest line used; images must be at least this wide and tall.
pub const fn max_line_length() -> usize {
    2 * N_SIZES + 1
}

fn step3(src: &[f64], w: usize, h: usize, (dx, dy): (isize, isize), erode: bool) -> Vec<f64> {
    let mut out = src.to_vec();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = (y * w as isize + x) as usize;
            let mut v = src[i];
            for s in [-1, 1] {
                let (nx, ny) = (x + s * dx, y + s * dy);
                if nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize {
                    let n = src[(ny * w as isize + nx) as usize];
                    v = if erode { v.min(n) } else { v.max(n) };
                }
            }
            out[i] = v;
        }
    }
    out
}

fn repeat(src: &[f64], w: usize, h: usize, dir: (isize, isize), erode: bool, k: usize) -> Vec<f64> {
    let mut cur = src.to_vec();
    for _ in 0..k {
        cur = step3(&cur, w, h, dir, erode);
    }
    cur
}

/// Opening and closing volume residuals for one plane and one direction:
/// `[open_1..open_13, close_1..close_13]`, where size `s` uses a line of
/// length `2s+1` and residual `s` is the volume change from size `s-1`.
pub fn residuals_for_angle(plane: &GrayImage, dir: (isize, isize)) -> Vec<f64> {
    let (w, h) = (plane.width(), plane.height());
    let src = plane.as_slice();
    let volume: f64 = src.iter().sum();
    let mut open = vec![0.0; N_SIZES];
    let mut close = vec![0.0; N_SIZES];
    let mut eroded = src.to_vec();
    let mut dilated = src.to_vec();
    let (mut prev_open, mut prev_close) = (volume, volume);
    for s in 1..=N_SIZES {
        eroded = step3(&eroded, w, h, dir, true);
        dilated = step3(&dilated, w, h, dir, false);
        let opened: f64 = repeat(&eroded, w, h, dir, false, s).iter().sum();
        let closed: f64 = repeat(&dilated, w, h, dir, true, s).iter().sum();
        open[s - 1] = prev_open - opened;
        close[s - 1] = closed - prev_close;
        prev_open = opened;
        prev_close = closed;
    }
    open.extend(close);
    open
}

/// 26 residuals per channel, averaged over the four directions (78 values).
pub fn granulometry(img: &RgbImage) -> Result<Vec<f64>> {
    let min = max_line_length();
    if img.width() < min || img.height() < min {
        return Err(Error::ImageTooSmall {
            kind: "granulometry".into(),
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let mut out = Vec::with_capacity(3 * 2 * N_SIZES);
    for plane in img.channels() {
        let mut acc = vec![0.0; 2 * N_SIZES];
        for dir in ANGLE_STEPS {
            for (a, r) in acc.iter_mut().zip(residuals_for_angle(&plane, dir)) {
                *a += r / ANGLE_STEPS.len() as f64;
            }
        }
        out.extend(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_erode(src: &GrayImage, dir: (isize, isize), k: isize) -> Vec<f64> {
        let (w, h) = (src.width() as isize, src.height() as isize);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut v = f64::INFINITY;
                for t in -k..=k {
                    let (nx, ny) = (x + t * dir.0, y + t * dir.1);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        v = v.min(src.get(nx as usize, ny as usize));
                    }
                }
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn incremental_erosion_equals_direct_line() {
        let img = GrayImage::from_fn(15, 11, |x, y| ((x * 31 + y * 17) % 23) as f64);
        for dir in ANGLE_STEPS {
            for k in 1..6 {
                let inc = repeat(img.as_slice(), 15, 11, dir, true, k);
                assert_eq!(inc, brute_erode(&img, dir, k as isize), "dir {dir:?} k {k}");
            }
        }
    }

    #[test]
    fn flat_image_has_zero_residuals() {
        let img = RgbImage::filled(30, 30, [9, 90, 200]);
        let g = granulometry(&img).unwrap();
        assert_eq!(g.len(), 78);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_three_pixel_line() {
        // Hand evaluation: the 3-pixel horizontal segment survives the
        // 3-pixel horizontal opening and is erased by the 5-pixel one, so the
        // whole volume 3*255 lands in opening residual index 1 (size 2).
        // Vertical lines of any length erase it at size 1.
        let plane = GrayImage::from_fn(32, 32, |x, y| {
            if y == 16 && (15..18).contains(&x) {
                255.0
            } else {
                0.0
            }
        });
        let horiz = residuals_for_angle(&plane, (1, 0));
        let mut expected = vec![0.0; 26];
        expected[1] = 765.0;
        assert_eq!(horiz, expected);
        let vert = residuals_for_angle(&plane, (0, 1));
        let mut expected = vec![0.0; 26];
        expected[0] = 765.0;
        assert_eq!(vert, expected);
    }

    #[test]
    fn small_image_rejected() {
        assert!(granulometry(&RgbImage::filled(20, 40, [0, 0, 0])).is_err());
    }
}
