use crate::error::{Error, Result};

/// Regular lattice of patch centers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeypointGrid {
    pub step: usize,
    pub patch: usize,
    pub points: Vec<(usize, usize)>,
}

impl KeypointGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn axis(extent: usize, step: usize, patch: usize) -> Vec<usize> {
    let half = patch / 2;
    (0..)
        .map(|i| half + i * step)
        .take_while(|&c| c + (patch - half) <= extent)
        .collect()
}

/// Centers at `patch/2 + i*step` whose patch stays inside the image,
/// row-major order.
pub fn dense_keypoints(width: usize, height: usize, step: usize, patch: usize) -> Result<KeypointGrid> {
    if step == 0 || patch == 0 {
        return Err(Error::InvalidParameter("grid step and patch must be positive".into()));
    }
    let xs = axis(width, step, patch);
    let ys = axis(height, step, patch);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::ImageTooSmall {
            kind: "dense grid".into(),
            width,
            height,
            min: patch,
        });
    }
    let points = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    Ok(KeypointGrid { step, patch, points })
}
