//! Row-major image buffers used by the descriptor extractors.

use std::path::Path;

use crate::error::{Error, Result};

/// File extensions accepted when scanning image directories (lowercase).
pub const SUPPORTED_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff", "bmp"];

pub fn is_supported_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// 8-bit RGB image, interleaved, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data).expect("valid dimensions")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data).expect("valid dimensions")
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = ::image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self::from(img.to_rgb8()))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = ::image::load_from_memory(bytes).map_err(|e| Error::Decode {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?;
        Ok(Self::from(img.to_rgb8()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// One channel as a real-valued plane.
    pub fn channel(&self, c: usize) -> GrayImage {
        assert!(c < 3);
        let data = self.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn channels(&self) -> [GrayImage; 3] {
        [self.channel(0), self.channel(1), self.channel(2)]
    }

    /// Rotates by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, |x, y| self.pixel(w - 1 - y, x))
    }
}

impl From<::image::RgbImage> for RgbImage {
    fn from(img: ::image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w as usize,
            height: h as usize,
            data: img.into_raw(),
        }
    }
}

/// Real-valued single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("valid dimensions")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("valid dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel access with coordinates clamped to the image.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }
}

/// Luma conversion `L = 0.299 R + 0.587 G + 0.114 B`, kept real-valued.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .pixels()
        .map(|[r, g, b]| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}
