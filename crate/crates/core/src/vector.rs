//! Feature vectors and descriptor kinds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::GlobalKind;
use crate::local::LocalKind;

/// Result of [`l2_normalize`]. `zero` is set when the input had no energy
/// and was returned unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub zero: bool,
}

/// Divides `v` by its Euclidean norm. All-zero vectors are returned
/// unchanged and flagged.
pub fn l2_normalize(v: &[f64]) -> Result<Normalized> {
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    // Scale first so that huge or tiny entries do not overflow the sum of squares.
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Ok(Normalized {
            values: v.to_vec(),
            zero: true,
        });
    }
    let norm = max * v.iter().map(|x| (x / max) * (x / max)).sum::<f64>().sqrt();
    Ok(Normalized {
        values: v.iter().map(|x| x / norm).collect(),
        zero: false,
    })
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Descriptor kind tag carried by feature vectors and tables.
///
/// Native kinds are extracted by this crate; anything else is an external
/// kind (e.g. `vgg_m` or `resnet50`) ingested from precomputed vectors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DescriptorKind {
    Global(GlobalKind),
    Local(LocalKind),
    External(String),
}

impl DescriptorKind {
    pub fn name(&self) -> &str {
        match self {
            DescriptorKind::Global(k) => k.name(),
            DescriptorKind::Local(k) => k.name(),
            DescriptorKind::External(s) => s,
        }
    }

    /// Parses a native kind name, rejecting anything else.
    pub fn parse_native(s: &str) -> Result<Self> {
        match s.parse()? {
            DescriptorKind::External(_) => Err(Error::UnknownKind(s.to_string())),
            k => Ok(k),
        }
    }

    pub fn is_native(&self) -> bool {
        !matches!(self, DescriptorKind::External(_))
    }

    /// Registered dimension of native kinds at default parameters.
    pub fn default_dim(&self) -> Option<usize> {
        match self {
            DescriptorKind::Global(k) => Some(k.default_dim()),
            DescriptorKind::Local(k) => Some(k.default_dim()),
            DescriptorKind::External(_) => None,
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(k) = GlobalKind::from_name(s) {
            return Ok(DescriptorKind::Global(k));
        }
        if let Some(k) = LocalKind::from_name(s) {
            return Ok(DescriptorKind::Local(k));
        }
        let valid = !s.is_empty()
            && s
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if valid {
            Ok(DescriptorKind::External(s.to_string()))
        } else {
            Err(Error::UnknownKind(s.to_string()))
        }
    }
}

impl Serialize for DescriptorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DescriptorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An L2-normalized descriptor for one image, stored at single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub image_id: u32,
    pub kind: DescriptorKind,
    pub values: Vec<f32>,
    /// Raw vector was all-zero; `values` is left all-zero.
    pub zero: bool,
}

impl FeatureVector {
    /// Normalizes `raw` and wraps it.
    pub fn from_raw(image_id: u32, kind: DescriptorKind, raw: &[f64]) -> Result<Self> {
        let n = l2_normalize(raw)?;
        Ok(Self {
            image_id,
            kind,
            values: n.values.iter().map(|&x| x as f32).collect(),
            zero: n.zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}
