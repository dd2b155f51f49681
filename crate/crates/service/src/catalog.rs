//! Read-only collection of feature tables, quantizers and image files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use cbir_core::dataset::Dataset;
use cbir_core::error::{Error, Result};
use cbir_core::feedback::HiKernel;
use cbir_core::local::{LocalKind, LocalModel};
use cbir_core::store::{self, FeatureTable};

pub struct TableEntry {
    pub table: Arc<FeatureTable>,
    gram: OnceLock<Option<Vec<f64>>>,
}

impl TableEntry {
    pub fn new(table: FeatureTable) -> Self {
        Self {
            table: Arc::new(table),
            gram: OnceLock::new(),
        }
    }

    /// Histogram-intersection kernel, with the Gram matrix computed once.
    pub fn kernel(&self) -> Result<HiKernel<'_>> {
        let gram = self
            .gram
            .get_or_init(|| HiKernel::cached(&self.table).ok().and_then(HiKernel::into_gram));
        match gram {
            Some(g) => HiKernel::with_gram(&self.table, g),
            None => HiKernel::new(&self.table),
        }
    }
}

#[derive(Default)]
pub struct DatasetEntry {
    pub tables: BTreeMap<String, TableEntry>,
    pub models: BTreeMap<LocalKind, LocalModel>,
    /// Image files and labels, when the dataset directory is available.
    pub images: Option<Dataset>,
}

#[derive(Default)]
pub struct Catalog {
    pub datasets: BTreeMap<String, DatasetEntry>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_table(&mut self, table: FeatureTable) {
        let entry = self.datasets.entry(table.dataset.clone()).or_default();
        entry.tables.insert(table.kind.to_string(), TableEntry::new(table));
    }

    pub fn insert_model(&mut self, dataset: &str, kind: LocalKind, model: LocalModel) {
        self.datasets.entry(dataset.to_string()).or_default().models.insert(kind, model);
    }

    pub fn attach_images(&mut self, images: Dataset) {
        let name = images.name.clone();
        self.datasets.entry(name).or_default().images = Some(images);
    }

    /// Loads every table and quantizer in `dir`. With `kinds`, only those
    /// descriptor tables are kept.
    pub fn load_dir(&mut self, dir: &Path, kinds: Option<&[String]>) -> Result<()> {
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == store::EXTENSION))
            .collect();
        paths.sort();
        for p in paths {
            let file = p.file_name().and_then(|f| f.to_str()).unwrap_or_default().to_string();
            if let Some(stem) = file.strip_suffix(&format!(".model.{}", store::EXTENSION)) {
                let Some((dataset, kind)) = stem.rsplit_once('.') else { continue };
                let Some(kind) = LocalKind::from_name(kind) else { continue };
                self.insert_model(dataset, kind, store::load_model(&p)?);
                continue;
            }
            let t = store::load_table(&p)?;
            if kinds.is_some_and(|ks| !ks.iter().any(|k| *k == t.kind.to_string())) {
                continue;
            }
            log::info!("loaded {} ({} x {})", p.display(), t.len(), t.dim());
            self.insert_table(t);
        }
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Option<&DatasetEntry> {
        self.datasets.get(name)
    }
}
