//! Flat TOML config merged under command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Deserialize;

use cbir_core::eval::Scheme;
use cbir_core::retrieval::Metric;

use crate::UsageError;

/// Flags shared by every subcommand. Unset flags fall back to `--config`.
#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// Dataset directory (one sub-directory per class), a labels JSON file,
    /// or `synthetic` for Gaussian blobs.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Comma-separated descriptor kinds.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    /// Expansion size for pseudo and manual feedback.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "alrf-iters")]
    pub alrf_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding feature tables and quantizers.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Flat TOML file with defaults for any of the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    kinds: Option<KindList>,
    metric: Option<Metric>,
    scheme: Option<Scheme>,
    n: Option<usize>,
    alrf_iters: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    features: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum KindList {
    List(Vec<String>),
    Csv(String),
}

impl KindList {
    fn into_vec(self) -> Vec<String> {
        match self {
            KindList::List(v) => v,
            KindList::Csv(s) => s.split(',').map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect(),
        }
    }
}

fn read_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

impl Common {
    /// Fills unset flags from the config file, if one was given.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let f = read_config(&path)?;
        self.dataset = self.dataset.or(f.dataset);
        self.kinds = self.kinds.or(f.kinds.map(KindList::into_vec));
        self.metric = self.metric.or(f.metric);
        self.scheme = self.scheme.or(f.scheme);
        self.n = self.n.or(f.n);
        self.alrf_iters = self.alrf_iters.or(f.alrf_iters);
        self.seed = self.seed.or(f.seed);
        self.workers = self.workers.or(f.workers);
        self.out = self.out.or(f.out);
        self.features = self.features.or(f.features);
        Ok(self)
    }

    pub fn dataset(&self) -> anyhow::Result<&str> {
        self.dataset
            .as_deref()
            .ok_or_else(|| UsageError("--dataset is required".into()).into())
    }

    pub fn kinds(&self) -> anyhow::Result<&[String]> {
        match self.kinds.as_deref() {
            Some(k) if !k.is_empty() => Ok(k),
            _ => Err(UsageError("--kinds is required".into()).into()),
        }
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn features_or(&self, default: &str) -> PathBuf {
        self.features.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}
