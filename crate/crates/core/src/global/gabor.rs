//! Gabor filter-bank texture statistics, including opponent-color features.
//!
//! Filtering is done by FFT convolution over a reflect-padded plane.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborBankParams {
    /// Center frequencies in cycles per pixel.
    pub frequencies: Vec<f64>,
    pub n_orientations: usize,
    /// Gaussian envelope width is `sigma_factor / frequency`.
    pub sigma_factor: f64,
    /// Kernel half-size is `ceil(truncate * sigma)`.
    pub truncate: f64,
}

impl Default for GaborBankParams {
    fn default() -> Self {
        Self {
            frequencies: vec![0.4, 0.2, 0.1, 0.05],
            n_orientations: 4,
            sigma_factor: 0.56,
            truncate: 3.0,
        }
    }
}

impl GaborBankParams {
    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() || self.n_orientations == 0 {
            return Err(Error::InvalidParameter(
                "Gabor bank needs >= 1 frequency and >= 1 orientation".into(),
            ));
        }
        if self.frequencies.iter().any(|&f| !(f > 0.0 && f <= 0.5)) {
            return Err(Error::InvalidParameter(
                "Gabor frequencies must lie in (0, 0.5]".into(),
            ));
        }
        if !(self.sigma_factor > 0.0 && self.truncate > 0.0) {
            return Err(Error::InvalidParameter("Gabor sigma/truncate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_filters(&self) -> usize {
        self.frequencies.len() * self.n_orientations
    }

    fn half_size(&self, frequency: f64) -> usize {
        (self.truncate * self.sigma_factor / frequency).ceil() as usize
    }

    /// Largest kernel side length in the bank; images must be at least this big.
    pub fn max_kernel_size(&self) -> usize {
        self.frequencies
            .iter()
            .map(|&f| 2 * self.half_size(f) + 1)
            .max()
            .unwrap_or(1)
    }

    /// Number of opponent `(frequency, frequency')` pairs: same and adjacent.
    pub fn n_frequency_pairs(&self) -> usize {
        2 * self.frequencies.len() - 1
    }

    pub fn gabor_dim(&self, channels: usize) -> usize {
        channels * self.n_filters() * 2
    }

    pub fn opponent_dim(&self) -> usize {
        self.gabor_dim(3) + 3 * self.n_frequency_pairs() * self.n_orientations * 2
    }
}

/// Zero-mean complex Gabor kernel, `(2h+1)^2` row-major, center at `(h, h)`.
fn kernel(frequency: f64, theta: f64, params: &GaborBankParams) -> (Vec<Complex64>, usize) {
    let sigma = params.sigma_factor / frequency;
    let h = params.half_size(frequency) as isize;
    let side = (2 * h + 1) as usize;
    let mut gauss = Vec::with_capacity(side * side);
    let mut k = Vec::with_capacity(side * side);
    let (c, s) = (theta.cos(), theta.sin());
    for y in -h..=h {
        for x in -h..=h {
            let (xf, yf) = (x as f64, y as f64);
            let g = (-(xf * xf + yf * yf) / (2.0 * sigma * sigma)).exp();
            let phase = 2.0 * std::f64::consts::PI * frequency * (xf * c + yf * s);
            gauss.push(g);
            k.push(Complex64::from_polar(g, phase));
        }
    }
    let gsum: f64 = gauss.iter().sum();
    let dc: Complex64 = k.iter().sum::<Complex64>() / gsum;
    for (v, &g) in k.iter_mut().zip(&gauss) {
        *v = (*v - dc * g) / gsum;
    }
    (k, h as usize)
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

struct Fft2 {
    w: usize,
    h: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(w: usize, h: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            w,
            h,
            row_fwd: planner.plan_fft_forward(w),
            col_fwd: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in data.chunks_exact_mut(self.w) {
            row.process(r);
        }
        let mut column = vec![Complex64::default(); self.h];
        for x in 0..self.w {
            for y in 0..self.h {
                column[y] = data[y * self.w + x];
            }
            col.process(&mut column);
            for y in 0..self.h {
                data[y * self.w + x] = column[y];
            }
        }
        if inverse {
            let scale = 1.0 / (self.w * self.h) as f64;
            data.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Response magnitudes of every filter, ordered frequency-major then
/// orientation. Each entry is a `width * height` plane.
pub fn gabor_magnitudes(img: &GrayImage, params: &GaborBankParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    let min = params.max_kernel_size();
    if img.width() < min || img.height() < min {
        return Err(Error::ImageTooSmall {
            kind: "gabor".into(),
            width: img.width(),
            height: img.height(),
            min,
        });
    }
    let pad = (min - 1) / 2;
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let fft = Fft2::new(pw, ph);

    let mut spectrum: Vec<Complex64> = (0..ph)
        .flat_map(|y| (0..pw).map(move |x| (x, y)))
        .map(|(x, y)| {
            let sx = reflect(x as isize - pad as isize, w);
            let sy = reflect(y as isize - pad as isize, h);
            Complex64::new(img.get(sx, sy), 0.0)
        })
        .collect();
    fft.run(&mut spectrum, false);

    let mut out = Vec::with_capacity(params.n_filters());
    for &f in &params.frequencies {
        for o in 0..params.n_orientations {
            let theta = std::f64::consts::PI * o as f64 / params.n_orientations as f64;
            let (k, kh) = kernel(f, theta, params);
            let side = 2 * kh + 1;
            let mut kf = vec![Complex64::default(); pw * ph];
            for ky in 0..side {
                for kx in 0..side {
                    let x = (kx as isize - kh as isize).rem_euclid(pw as isize) as usize;
                    let y = (ky as isize - kh as isize).rem_euclid(ph as isize) as usize;
                    kf[y * pw + x] = k[ky * side + kx];
                }
            }
            fft.run(&mut kf, false);
            for (a, b) in kf.iter_mut().zip(&spectrum) {
                *a *= b;
            }
            fft.run(&mut kf, true);
            let mut mag = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    mag.push(kf[(y + pad) * pw + x + pad].norm());
                }
            }
            out.push(mag);
        }
    }
    Ok(out)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Residual round-off of zero-mean filters on flat regions is cleared so a
/// flat image yields an exactly zero descriptor.
fn clean(v: f64) -> f64 {
    if v.abs() < 1e-9 {
        0.0
    } else {
        v
    }
}

/// Mean and standard deviation of each filter's response magnitude.
pub fn gabor_bank_stats(img: &GrayImage, params: &GaborBankParams) -> Result<Vec<f64>> {
    let mags = gabor_magnitudes(img, params)?;
    Ok(stats_of(&mags))
}

fn stats_of(mags: &[Vec<f64>]) -> Vec<f64> {
    mags.iter()
        .flat_map(|m| {
            let (mean, std) = mean_std(m);
            [clean(mean), clean(std)]
        })
        .collect()
}

/// Per-channel Gabor statistics followed by opponent features between every
/// channel pair at the same and adjacent frequencies.
pub fn opponent_gabor(channels: &[GrayImage; 3], params: &GaborBankParams) -> Result<Vec<f64>> {
    let mags: Vec<Vec<Vec<f64>>> = channels
        .iter()
        .map(|c| gabor_magnitudes(c, params))
        .collect::<Result<_>>()?;
    let mut out: Vec<f64> = mags.iter().flat_map(|m| stats_of(m)).collect();

    let n_orient = params.n_orientations;
    let n_freq = params.frequencies.len();
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let norms: Vec<Vec<f64>> = mags.iter().map(|m| m.iter().map(|p| rms(p)).collect()).collect();
    let mut diff = vec![0.0; channels[0].width() * channels[0].height()];
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let freq_pairs = (0..n_freq).map(|f| (f, f)).chain((0..n_freq - 1).map(|f| (f, f + 1)));
        for (fa, fb) in freq_pairs {
            for o in 0..n_orient {
                let (a, b) = (fa * n_orient + o, fb * n_orient + o);
                let (na, nb) = (norms[i][a], norms[j][b]);
                let sa = if na > 1e-12 { 1.0 / na } else { 0.0 };
                let sb = if nb > 1e-12 { 1.0 / nb } else { 0.0 };
                for ((d, &x), &y) in diff.iter_mut().zip(&mags[i][a]).zip(&mags[j][b]) {
                    *d = (x * sa - y * sb).abs();
                }
                let (mean, std) = mean_std(&diff);
                out.push(clean(mean));
                out.push(clean(std));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let p = GaborBankParams::default();
        assert_eq!(p.gabor_dim(1), 32);
        assert_eq!(p.gabor_dim(3), 96);
        assert_eq!(p.opponent_dim(), 264);
    }

    #[test]
    fn kernel_is_zero_mean() {
        let p = GaborBankParams::default();
        for &f in &p.frequencies {
            let (k, _) = kernel(f, 0.7, &p);
            assert!(k.iter().sum::<Complex64>().norm() < 1e-12);
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn flat_image_gives_zero_stats() {
        let img = GrayImage::filled(72, 72, 90.0);
        let s = gabor_bank_stats(&img, &GaborBankParams::default()).unwrap();
        assert_eq!(s.len(), 32);
        assert!(s.iter().all(|&v| v == 0.0), "{s:?}");
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let p = GaborBankParams {
            frequencies: vec![0.4],
            n_orientations: 2,
            ..Default::default()
        };
        let img = GrayImage::from_fn(12, 11, |x, y| ((x * 7 + y * 13) % 17) as f64);
        let mags = gabor_magnitudes(&img, &p).unwrap();
        for (o, m) in mags.iter().enumerate() {
            let theta = std::f64::consts::PI * o as f64 / 2.0;
            let (k, kh) = kernel(0.4, theta, &p);
            let side = 2 * kh + 1;
            for (y, x) in [(0usize, 0usize), (5, 6), (10, 11), (3, 0)] {
                let mut acc = Complex64::default();
                for ky in 0..side {
                    for kx in 0..side {
                        let sx = reflect(x as isize - (kx as isize - kh as isize), 12);
                        let sy = reflect(y as isize - (ky as isize - kh as isize), 11);
                        acc += k[ky * side + kx] * img.get(sx, sy);
                    }
                }
                assert!((acc.norm() - m[y * 12 + x]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn oriented_grating_excites_matching_orientation() {
        let p = GaborBankParams::default();
        // vertical stripes: intensity varies along x at 0.2 cycles/pixel
        let img = GrayImage::from_fn(80, 80, |x, _| {
            128.0 + 100.0 * (2.0 * std::f64::consts::PI * 0.2 * x as f64).cos()
        });
        let s = gabor_bank_stats(&img, &p).unwrap();
        // frequency index 1 (0.2), orientation 0 => mean at position (1*4+0)*2
        let best = (0..16).max_by(|&a, &b| s[2 * a].total_cmp(&s[2 * b])).unwrap();
        assert_eq!(best, 4);
    }

    #[test]
    fn too_small_is_rejected() {
        let img = GrayImage::filled(20, 20, 0.0);
        assert!(matches!(
            gabor_bank_stats(&img, &GaborBankParams::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }
}
