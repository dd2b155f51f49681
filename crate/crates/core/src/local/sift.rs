//! Upright, fixed-scale SIFT descriptors on a dense grid.

use super::{KeypointGrid, LocalDescriptorSet};
use crate::image::GrayImage;

pub const SIFT_DIM: usize = 128;
const CELLS: usize = 4;
const ORIENTATIONS: usize = 8;
const CLAMP: f64 = 0.2;

fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut mag = Vec::with_capacity(w * h);
    let mut ang = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y);
            let gy = img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1);
            mag.push((gx * gx + gy * gy).sqrt());
            ang.push(gy.atan2(gx).rem_euclid(2.0 * std::f64::consts::PI));
        }
    }
    (mag, ang)
}

fn normalize(d: &mut [f64]) {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for v in d.iter_mut() {
        *v = (*v / norm).min(CLAMP);
    }
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.iter_mut().for_each(|v| *v /= norm);
}

/// 4x4 cells x 8 orientations over a `grid.patch` square around each point.
///
/// Votes are Gaussian-weighted gradient magnitudes, spread trilinearly over
/// neighbouring cells and orientation bins. Each descriptor is L2-normalized,
/// clamped at 0.2 and renormalized; flat patches stay all-zero.
pub fn dense_sift(image_id: u32, img: &GrayImage, grid: &KeypointGrid) -> LocalDescriptorSet {
    let (mag, ang) = gradients(img);
    let patch = grid.patch;
    let half = patch / 2;
    let cell = patch as f64 / CELLS as f64;
    let sigma = patch as f64 / 2.0;
    let bin_width = 2.0 * std::f64::consts::PI / ORIENTATIONS as f64;
    let mut data = Vec::with_capacity(grid.len() * SIFT_DIM);
    let mut desc = [0.0f64; SIFT_DIM];
    for &(cx, cy) in &grid.points {
        desc.fill(0.0);
        for py in 0..patch {
            for px in 0..patch {
                let (x, y) = (cx - half + px, cy - half + py);
                let i = y * img.width() + x;
                let m = mag[i];
                if m == 0.0 {
                    continue;
                }
                let u = px as f64 + 0.5;
                let v = py as f64 + 0.5;
                let du = u - half as f64;
                let dv = v - half as f64;
                let weight = m * (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();

                let fx = u / cell - 0.5;
                let fy = v / cell - 0.5;
                let fo = ang[i] / bin_width;
                let (x0, y0, o0) = (fx.floor(), fy.floor(), fo.floor());
                let (ax, ay, ao) = (fx - x0, fy - y0, fo - o0);
                for (dyc, wy) in [(0, 1.0 - ay), (1, ay)] {
                    let yc = y0 as isize + dyc;
                    if yc < 0 || yc >= CELLS as isize || wy == 0.0 {
                        continue;
                    }
                    for (dxc, wx) in [(0, 1.0 - ax), (1, ax)] {
                        let xc = x0 as isize + dxc;
                        if xc < 0 || xc >= CELLS as isize || wx == 0.0 {
                            continue;
                        }
                        for (doc, wo) in [(0, 1.0 - ao), (1, ao)] {
                            if wo == 0.0 {
                                continue;
                            }
                            let o = (o0 as usize + doc) % ORIENTATIONS;
                            let idx = (yc as usize * CELLS + xc as usize) * ORIENTATIONS + o;
                            desc[idx] += weight * wx * wy * wo;
                        }
                    }
                }
            }
        }
        normalize(&mut desc);
        data.extend(desc.iter().map(|&v| v as f32));
    }
    LocalDescriptorSet {
        image_id,
        dim: SIFT_DIM,
        data,
    }
}
