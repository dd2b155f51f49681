//! Class-structured image collections (`<root>/<class>/<image>`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::is_supported_image;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u32,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub class_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<ImageRecord>,
    pub classes: Vec<String>,
    /// Non-fatal problems found while loading (e.g. classes with a single image).
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Dataset {
    /// Loads a dataset laid out as one directory per class.
    ///
    /// Classes are sorted by name and images by file name; ids are assigned
    /// densely in that order. Files whose extension is not a supported raster
    /// format are ignored. Only image headers are decoded here.
    pub fn load(root: &Path) -> Result<Self> {
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut class_dirs = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            let path = entry.path();
            if path.is_dir() {
                class_dirs.push(path);
            }
        }
        class_dirs.sort();
        if class_dirs.is_empty() {
            return Err(Error::NoClasses(root.to_path_buf()));
        }

        let mut images = Vec::new();
        let mut classes = Vec::new();
        let mut warnings = Vec::new();
        for (class_index, dir) in class_dirs.iter().enumerate() {
            let class_name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_supported_image(p))
                .collect();
            files.sort();
            if files.len() < 2 {
                let msg = format!(
                    "class `{class_name}` has {} image(s); its queries have no ground truth",
                    files.len()
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            for path in files {
                let (width, height) = read_dimensions(&path)?;
                images.push(ImageRecord {
                    id: images.len() as u32,
                    path,
                    width,
                    height,
                    class_index,
                });
            }
            classes.push(class_name);
        }

        let name = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        Ok(Self {
            name,
            images,
            classes,
            warnings,
        })
    }

    /// A label-only dataset (no image files), used for precomputed features
    /// and synthetic experiments.
    pub fn from_labels(name: &str, class_names: Vec<String>, labels: &[usize]) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidParameter(format!(
                "class index {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        let images = labels
            .iter()
            .enumerate()
            .map(|(i, &class_index)| ImageRecord {
                id: i as u32,
                path: PathBuf::new(),
                width: 1,
                height: 1,
                class_index,
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            images,
            classes: class_names,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, id: u32) -> Option<&ImageRecord> {
        self.images.get(id as usize)
    }

    pub fn class_of(&self, id: u32) -> Option<usize> {
        self.image(id).map(|r| r.class_index)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|r| r.class_index).collect()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.classes.len()];
        for r in &self.images {
            sizes[r.class_index] += 1;
        }
        sizes
    }
}

fn read_dimensions(path: &Path) -> Result<(u32, u32)> {
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ::image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| decode_err(e.to_string()))?;
    if w == 0 || h == 0 {
        return Err(decode_err("zero-sized image".into()));
    }
    Ok((w, h))
}
