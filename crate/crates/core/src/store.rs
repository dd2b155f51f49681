//! Feature tables and their binary container (`.cbf`).
//!
//! Layout, little-endian: magic `CBF1`, version `u32`, kind and dataset as
//! `u32` length + UTF-8 bytes, dimension `u32`, record count `u32`, then
//! `count` records of `(id u32, dim x f32)`. A JSON manifest with the same
//! header fields (plus training metadata for quantizers) is written next to
//! the table as `<file>.json`; it is informational only.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::gmm::{GmmMeta, GMM_TAG};
use crate::local::kmeans::{TrainingMeta, KMEANS_TAG};
use crate::local::{Codebook, GmmModel, LocalKind, LocalModel};
use crate::vector::{l2_normalize, norm, DescriptorKind, FeatureVector};

pub const MAGIC: &[u8; 4] = b"CBF1";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "cbf";
/// Ingested rows whose norm is within this of 1 are kept as-is.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Vectors of one descriptor kind over (a subset of) a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub dataset: String,
    pub kind: DescriptorKind,
    dim: usize,
    ids: Vec<u32>,
    data: Vec<f32>,
    index: HashMap<u32, usize>,
    min_value: f32,
}

impl FeatureTable {
    pub fn new(dataset: &str, kind: DescriptorKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be positive".into()));
        }
        Ok(Self {
            dataset: dataset.to_string(),
            kind,
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            min_value: f32::INFINITY,
        })
    }

    /// Builds a table from extracted vectors, which must share kind and dimension.
    pub fn from_vectors(dataset: &str, vectors: &[FeatureVector]) -> Result<Self> {
        let first = vectors.first().ok_or_else(|| Error::Empty("feature vectors".into()))?;
        let mut t = Self::new(dataset, first.kind.clone(), first.dim())?;
        for v in vectors {
            if v.kind != t.kind {
                return Err(Error::InvalidParameter(format!(
                    "mixed descriptor kinds `{}` and `{}`",
                    t.kind, v.kind
                )));
            }
            t.push(v.image_id, &v.values)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, id: u32, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(values);
        self.min_value = values.iter().fold(self.min_value, |m, &v| m.min(v));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in storage order.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: u32) -> Option<&[f32]> {
        self.position(id).map(|p| self.row(p))
    }

    pub fn vector(&self, id: u32) -> Result<&[f32]> {
        self.get(id).ok_or(Error::UnknownId(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f32])> {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    /// Smallest entry in the table (`+inf` when empty).
    pub fn min_value(&self) -> f32 {
        self.min_value
    }

    /// Checks that every id belongs to a dataset of `n_images` dense ids.
    pub fn check_ids(&self, n_images: usize) -> Result<()> {
        match self.ids.iter().find(|&&id| id as usize >= n_images) {
            Some(&id) => Err(Error::UnknownId(id)),
            None => Ok(()),
        }
    }
}

/// Human-readable description written next to each container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub dataset: String,
    pub dim: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<serde_json::Value>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_container(table: &FeatureTable, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    // write to a temporary name and rename so readers never see a partial file
    let tmp = path.with_extension("cbf.partial");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_str(&mut w, table.kind.name())?;
        write_str(&mut w, &table.dataset)?;
        w.write_u32::<LittleEndian>(table.dim as u32)?;
        w.write_u32::<LittleEndian>(table.len() as u32)?;
        for (id, row) in table.iter() {
            w.write_u32::<LittleEndian>(id)?;
            for &v in row {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io)
}

fn write_manifest(table: &FeatureTable, path: &Path, training: Option<serde_json::Value>) -> Result<()> {
    let m = Manifest {
        format: "CBF1".into(),
        version: VERSION,
        kind: table.kind.name().to_string(),
        dataset: table.dataset.clone(),
        dim: table.dim,
        count: table.len(),
        training,
    };
    let mp = manifest_path(path);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&mp, text + "\n").map_err(|e| Error::io(&mp, e))
}

/// Writes the container and its JSON manifest.
pub fn save_table(table: &FeatureTable, path: &Path) -> Result<()> {
    write_container(table, path)?;
    write_manifest(table, path, None)
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::Truncated(format!("unexpected end of file while reading {what}"))
}

fn read_str(r: &mut Cursor<&[u8]>, what: &str) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(truncated(what))? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Truncated(format!("{what} runs past end of file")));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf).map_err(truncated(what))?;
    String::from_utf8(buf).map_err(|_| Error::InvalidParameter(format!("{what} is not valid UTF-8")))
}

/// Parses a container from memory.
pub fn parse_table(bytes: &[u8]) -> Result<FeatureTable> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotAFeatureTable);
    }
    let mut r = Cursor::new(bytes);
    r.set_position(4);
    let version = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind: DescriptorKind = read_str(&mut r, "kind")?.parse()?;
    let dataset = read_str(&mut r, "dataset name")?;
    let dim = r.read_u32::<LittleEndian>().map_err(truncated("dimension"))? as usize;
    let count = r.read_u32::<LittleEndian>().map_err(truncated("record count"))? as usize;
    let record = 4 + 4 * dim;
    let remaining = bytes.len() - r.position() as usize;
    let expected = count.checked_mul(record).ok_or_else(|| Error::Truncated("record count overflows".into()))?;
    if remaining < expected {
        return Err(Error::Truncated(format!(
            "{count} records of dimension {dim} need {expected} bytes, {remaining} present"
        )));
    }
    if remaining > expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: remaining,
        });
    }
    let mut t = FeatureTable::new(&dataset, kind, dim)?;
    t.ids.reserve(count);
    t.data.reserve(count * dim);
    let mut row = vec![0f32; dim];
    for _ in 0..count {
        let id = r.read_u32::<LittleEndian>().map_err(truncated("record"))?;
        r.read_f32_into::<LittleEndian>(&mut row).map_err(truncated("record"))?;
        t.push(id, &row)?;
    }
    Ok(t)
}

pub fn load_table(path: &Path) -> Result<FeatureTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_table(&bytes)
}

/// Reads the JSON manifest next to `path`, if any.
pub fn load_manifest(path: &Path) -> Result<Option<Manifest>> {
    let mp = manifest_path(path);
    match fs::read_to_string(&mp) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", mp.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&mp, e)),
    }
}

/// Conventional file name of a table: `<dataset>.<kind>.cbf`.
pub fn table_file_name(dataset: &str, kind: &DescriptorKind) -> String {
    format!("{dataset}.{kind}.{EXTENSION}")
}

/// File name of the quantizer used to encode a local kind.
pub fn model_file_name(dataset: &str, kind: LocalKind) -> String {
    format!("{dataset}.{}.model.{EXTENSION}", kind.name())
}

/// Reads precomputed vectors (e.g. CNN activations).
///
/// `path` is either a `.cbf` container or delimited text with one row per
/// image in dataset id order (commas and/or whitespace; blank lines and `#`
/// comments skipped). Rows are L2-normalized unless already unit-norm.
/// When `expected_rows` is given, text input must have exactly that many
/// rows and container ids must lie below it.
pub fn ingest_external(path: &Path, kind: &str, dataset: &str, expected_rows: Option<usize>) -> Result<FeatureTable> {
    let kind: DescriptorKind = kind.parse()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<(u32, Vec<f64>)> = if bytes.starts_with(MAGIC) {
        let t = parse_table(&bytes)?;
        if let Some(n) = expected_rows {
            t.check_ids(n)?;
        }
        t.iter().map(|(id, r)| (id, r.iter().map(|&v| v as f64).collect())).collect()
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Ingest {
            row: 0,
            reason: "file is neither a feature table nor UTF-8 text".into(),
        })?;
        let rows = parse_text_rows(&text)?;
        if let Some(n) = expected_rows {
            if rows.len() != n {
                return Err(Error::Ingest {
                    row: rows.len(),
                    reason: format!("found {} rows, dataset has {n} images", rows.len()),
                });
            }
        }
        rows.into_iter().enumerate().map(|(i, r)| (i as u32, r)).collect()
    };
    let dim = rows.first().map(|r| r.1.len()).ok_or_else(|| Error::Empty(path.display().to_string()))?;
    let mut t = FeatureTable::new(dataset, kind, dim)?;
    for (row, (id, v)) in rows.into_iter().enumerate() {
        let values: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let values = if (norm(&values) - 1.0).abs() <= UNIT_NORM_TOLERANCE {
            values
        } else {
            l2_normalize(&v)
                .map_err(|e| Error::Ingest {
                    row,
                    reason: e.to_string(),
                })?
                .values
                .iter()
                .map(|&x| x as f32)
                .collect()
        };
        t.push(id, &values).map_err(|e| Error::Ingest {
            row,
            reason: e.to_string(),
        })?;
    }
    Ok(t)
}

fn parse_text_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = rows.len();
        let values = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Ingest {
                    row,
                    reason: format!("cannot parse `{s}` as a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingest {
                row,
                reason: format!("non-finite value in column {index}"),
            });
        }
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::Ingest {
                    row,
                    reason: format!("ragged row: {} values, expected {}", values.len(), first.len()),
                });
            }
        }
        rows.push(values);
    }
    Ok(rows)
}

/// Saves a k-means codebook (one record per centroid).
pub fn save_codebook(cb: &Codebook, dataset: &str, path: &Path) -> Result<()> {
    let mut t = FeatureTable::new(dataset, DescriptorKind::External(KMEANS_TAG.into()), cb.dim)?;
    for i in 0..cb.k {
        t.push(i as u32, cb.centroid(i))?;
    }
    write_container(&t, path)?;
    write_manifest(&t, path, serde_json::to_value(&cb.meta).ok())
}

/// Saves a GMM, one record per component: `[weight, means.., variances..]`.
pub fn save_gmm(gmm: &GmmModel, dataset: &str, path: &Path) -> Result<()> {
    let mut t = FeatureTable::new(dataset, DescriptorKind::External(GMM_TAG.into()), 1 + 2 * gmm.dim)?;
    for c in 0..gmm.k {
        let mut row = vec![gmm.weights[c] as f32];
        row.extend(gmm.mean(c).iter().map(|&v| v as f32));
        row.extend(gmm.variance(c).iter().map(|&v| v as f32));
        t.push(c as u32, &row)?;
    }
    write_container(&t, path)?;
    write_manifest(&t, path, serde_json::to_value(&gmm.meta).ok())
}

pub fn save_model(model: &LocalModel, dataset: &str, path: &Path) -> Result<()> {
    match model {
        LocalModel::Codebook(cb) => save_codebook(cb, dataset, path),
        LocalModel::Gmm(g) => save_gmm(g, dataset, path),
    }
}

fn sorted_rows(t: &FeatureTable) -> Vec<&[f32]> {
    let mut order: Vec<(u32, usize)> = t.ids().iter().enumerate().map(|(p, &id)| (id, p)).collect();
    order.sort_unstable();
    order.into_iter().map(|(_, p)| t.row(p)).collect()
}

/// Loads a codebook or GMM, dispatching on the container's kind tag.
pub fn load_model(path: &Path) -> Result<LocalModel> {
    let t = load_table(path)?;
    let training = load_manifest(path)?.and_then(|m| m.training);
    match t.kind.name() {
        KMEANS_TAG => {
            let centroids = sorted_rows(&t).concat();
            let mut cb = Codebook::from_centroids(t.dim(), centroids)?;
            if let Some(meta) = training.and_then(|v| serde_json::from_value::<TrainingMeta>(v).ok()) {
                cb.meta = meta;
            }
            Ok(LocalModel::Codebook(cb))
        }
        GMM_TAG => {
            if t.dim() < 3 || t.dim() % 2 == 0 {
                return Err(Error::DimensionMismatch {
                    expected: 3,
                    actual: t.dim(),
                });
            }
            let d = (t.dim() - 1) / 2;
            let (mut w, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
            for row in sorted_rows(&t) {
                w.push(row[0] as f64);
                m.extend(row[1..1 + d].iter().map(|&x| x as f64));
                v.extend(row[1 + d..].iter().map(|&x| x as f64));
            }
            // weights were rounded to f32; restore an exact unit sum
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            let mut g = GmmModel::new(d, w, m, v)?;
            if let Some(meta) = training.and_then(|v| serde_json::from_value::<GmmMeta>(v).ok()) {
                g.meta = meta;
            }
            Ok(LocalModel::Gmm(g))
        }
        other => Err(Error::UnknownKind(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global::GlobalKind;

    fn sample_table() -> FeatureTable {
        let mut t = FeatureTable::new("toy", DescriptorKind::Global(GlobalKind::CoOcc), 5).unwrap();
        t.push(3, &[0.1, -0.0, f32::MIN_POSITIVE, 1e-30, 0.7]).unwrap();
        t.push(0, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        t
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.cbf");
        let t = sample_table();
        save_table(&t, &p).unwrap();
        let back = load_table(&p).unwrap();
        assert_eq!(back.ids(), t.ids());
        for ((_, a), (_, b)) in t.iter().zip(back.iter()) {
            let a: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(back.kind, t.kind);
        assert_eq!(back.dataset, "toy");
        let m = load_manifest(&p).unwrap().unwrap();
        assert_eq!((m.dim, m.count, m.kind.as_str()), (5, 2, "cooc"));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_table(b"PNG\x00rest"), Err(Error::NotAFeatureTable)));
        assert_eq!(parse_table(b"XXXX").unwrap_err().to_string(), "not a feature table");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        assert!(matches!(parse_table(&bytes), Err(Error::UnsupportedVersion(2))));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.cbf");
        save_table(&sample_table(), &p).unwrap();
        let full = fs::read(&p).unwrap();
        for cut in [6, 10, full.len() - 3] {
            assert!(matches!(parse_table(&full[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
        let mut long = full.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(parse_table(&long), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn table_invariants() {
        let mut t = sample_table();
        assert!(matches!(t.push(3, &[0.0; 5]), Err(Error::DuplicateId(3))));
        assert!(t.push(9, &[0.0; 4]).is_err());
        assert!(t.push(9, &[f32::NAN, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert_eq!(t.len(), 2);
        assert!(t.check_ids(4).is_ok());
        assert!(matches!(t.check_ids(3), Err(Error::UnknownId(3))));
        assert_eq!(t.min_value(), 0.0);
    }

    #[test]
    fn ingest_text_normalizes_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cnn.txt");
        fs::write(&p, "# resnet\n3 4\n0.6, 0.8\n\n0,0\n").unwrap();
        let t = ingest_external(&p, "resnet50", "toy", Some(3)).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get(0).unwrap(), &[0.6, 0.8]);
        assert_eq!(t.get(1).unwrap(), &[0.6, 0.8]);
        assert_eq!(t.get(2).unwrap(), &[0.0, 0.0]);
        assert!(ingest_external(&p, "resnet50", "toy", Some(4)).is_err());

        let c = dir.path().join("cnn.cbf");
        save_table(&t, &c).unwrap();
        assert_eq!(ingest_external(&c, "resnet50", "toy", Some(3)).unwrap(), t);
    }

    #[test]
    fn ingest_names_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        fs::write(&p, "1 2 3\n4 5 6\nNaN NaN NaN\n").unwrap();
        let e = ingest_external(&p, "vgg_m", "toy", None).unwrap_err();
        assert!(matches!(e, Error::Ingest { row: 2, .. }), "{e}");
        fs::write(&p, "1 2 3\n4 5\n").unwrap();
        let e = ingest_external(&p, "vgg_m", "toy", None).unwrap_err();
        assert!(matches!(e, Error::Ingest { row: 1, .. }), "{e}");
        assert!(e.to_string().contains("ragged"));
    }

    #[test]
    fn quantizers_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cb = Codebook::from_centroids(2, vec![1.0, 2.0, -3.0, 0.5, 7.0, 7.0]).unwrap();
        let p = dir.path().join("cb.cbf");
        save_codebook(&cb, "toy", &p).unwrap();
        match load_model(&p).unwrap() {
            LocalModel::Codebook(back) => assert_eq!(back, cb),
            _ => panic!("expected a codebook"),
        }

        let g = GmmModel::new(2, vec![0.25, 0.75], vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.5, 0.25, 2.0]).unwrap();
        let p = dir.path().join("gmm.cbf");
        save_gmm(&g, "toy", &p).unwrap();
        match load_model(&p).unwrap() {
            LocalModel::Gmm(back) => {
                assert_eq!(back.means, g.means);
                assert_eq!(back.variances, g.variances);
                assert_eq!(back.weights, g.weights);
            }
            _ => panic!("expected a GMM"),
        }

        let t = sample_table();
        let p = dir.path().join("plain.cbf");
        save_table(&t, &p).unwrap();
        assert!(matches!(load_model(&p), Err(Error::UnknownKind(_))));
    }
}
