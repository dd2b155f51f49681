use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cbir_core::dataset::Dataset;
use cbir_core::eval::{evaluate, EvalConfig, EvalOutput, Scheme};
use cbir_core::feedback::{AlrfConfig, FeedbackOracle, RfConfig};
use cbir_core::global::{extract_global, GlobalKind, GlobalParams};
use cbir_core::image::RgbImage;
use cbir_core::local::{
    describe, encode, learn_codebook_kmeans, learn_gmm, sample_rows, LocalKind, LocalModel, LocalParams,
    TRAINING_SAMPLE_CAP,
};
use cbir_core::report::{merge_reports, merged_tsv, read_report, report_stem, table_tsv, write_report};
use cbir_core::store::{self, FeatureTable};
use cbir_core::synthetic::{gaussian_blobs, BlobSpec};
use cbir_core::vector::FeatureVector;
use cbir_service::{AppState, Catalog, Sessions};

use crate::config::Common;
use crate::UsageError;

const KMEANS_ITERS: usize = 100;
const GMM_ITERS: usize = 50;

#[derive(Serialize, Deserialize)]
struct LabelsFile {
    name: String,
    classes: Vec<String>,
    labels: Vec<usize>,
}

fn labels_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.labels.json"))
}

/// Loads a class-per-directory dataset or a labels file written by `extract`.
pub fn load_dataset(spec: &str) -> anyhow::Result<Dataset> {
    let p = Path::new(spec);
    if p.is_dir() {
        return Ok(Dataset::load(p)?);
    }
    if p.is_file() {
        let l: LabelsFile =
            serde_json::from_slice(&fs::read(p)?).with_context(|| format!("reading labels {}", p.display()))?;
        return Ok(Dataset::from_labels(&l.name, l.classes, &l.labels)?);
    }
    Err(UsageError(format!("dataset `{spec}` is neither a directory nor a labels file")).into())
}

fn write_labels(ds: &Dataset, dir: &Path) -> anyhow::Result<()> {
    let l = LabelsFile {
        name: ds.name.clone(),
        classes: ds.classes.clone(),
        labels: ds.labels(),
    };
    fs::write(labels_path(dir, &ds.name), serde_json::to_string_pretty(&l)? + "\n")?;
    Ok(())
}

fn up_to_date(path: &Path, rows: usize) -> bool {
    matches!(store::load_table(path), Ok(t) if t.len() == rows)
}

fn open_images(ds: &Dataset) -> anyhow::Result<()> {
    if ds.images.is_empty() {
        bail!(UsageError(format!("dataset `{}` has no image files", ds.name)));
    }
    Ok(())
}

pub fn extract(c: &Common) -> anyhow::Result<()> {
    let ds = load_dataset(c.dataset()?)?;
    open_images(&ds)?;
    let out = c.out_or("features");
    fs::create_dir_all(&out)?;
    write_labels(&ds, &out)?;
    let params = GlobalParams::default();
    let lparams = LocalParams::default();
    for kind in c.kinds()? {
        let desc: cbir_core::vector::DescriptorKind = kind.parse()?;
        let path = out.join(store::table_file_name(&ds.name, &desc));
        if up_to_date(&path, ds.len()) {
            log::info!("{} up to date", path.display());
            continue;
        }
        let vectors: Vec<FeatureVector> = if let Some(g) = GlobalKind::from_name(kind) {
            ds.images
                .par_iter()
                .map(|r| extract_global(r.id, &RgbImage::open(&r.path)?, g, &params))
                .collect::<cbir_core::error::Result<_>>()?
        } else if let Some(l) = LocalKind::from_name(kind) {
            let mpath = out.join(store::model_file_name(&ds.name, l));
            if !mpath.exists() {
                bail!(UsageError(format!(
                    "{} needs a quantizer; run `cbir codebook --kinds {kind}` first",
                    kind
                )));
            }
            let model = store::load_model(&mpath)?;
            ds.images
                .par_iter()
                .map(|r| {
                    let d = describe(r.id, &RgbImage::open(&r.path)?, l, &lparams)?;
                    encode(l, &d, &model)
                })
                .collect::<cbir_core::error::Result<_>>()?
        } else {
            bail!(UsageError(format!("`{kind}` is not an extractable descriptor; use `ingest`")));
        };
        let zero = vectors.iter().filter(|v| v.zero).count();
        if zero > 0 {
            log::warn!("{kind}: {zero} image(s) produced an all-zero descriptor");
        }
        let table = FeatureTable::from_vectors(&ds.name, &vectors)?;
        store::save_table(&table, &path)?;
        log::info!("wrote {} ({} x {})", path.display(), table.len(), table.dim());
    }
    Ok(())
}

pub fn codebook(c: &Common, k: Option<usize>, sample_cap: usize) -> anyhow::Result<()> {
    let ds = load_dataset(c.dataset()?)?;
    open_images(&ds)?;
    let out = c.out_or("features");
    fs::create_dir_all(&out)?;
    let seed = c.seed.unwrap_or(0);
    let lparams = LocalParams::default();
    for kind in c.kinds()? {
        let l = LocalKind::from_name(kind)
            .ok_or_else(|| UsageError(format!("`{kind}` is not a local descriptor kind")))?;
        let path = out.join(store::model_file_name(&ds.name, l));
        if store::load_model(&path).is_ok() {
            log::info!("{} up to date", path.display());
            continue;
        }
        let sets = ds
            .images
            .par_iter()
            .map(|r| describe(r.id, &RgbImage::open(&r.path)?, l, &lparams))
            .collect::<cbir_core::error::Result<Vec<_>>>()?;
        let data = sample_rows(&sets, sample_cap, seed)?;
        let dim = l.descriptor_dim();
        let k = k.unwrap_or_else(|| l.default_k());
        log::info!("{kind}: training k = {k} on {} descriptors", data.len() / dim);
        let model = match l {
            LocalKind::DenseSiftFisher => LocalModel::Gmm(learn_gmm(&data, dim, k, seed, GMM_ITERS)?),
            _ => LocalModel::Codebook(learn_codebook_kmeans(&data, dim, k, seed, KMEANS_ITERS)?),
        };
        store::save_model(&model, &ds.name, &path)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

pub fn ingest(c: &Common, input: &Path) -> anyhow::Result<()> {
    let ds = load_dataset(c.dataset()?)?;
    let kinds = c.kinds()?;
    let [kind] = kinds else {
        bail!(UsageError("ingest takes exactly one --kinds name".into()));
    };
    let out = c.out_or("features");
    fs::create_dir_all(&out)?;
    write_labels(&ds, &out)?;
    let table = store::ingest_external(input, kind, &ds.name, Some(ds.len()))?;
    let path = out.join(store::table_file_name(&ds.name, &table.kind));
    store::save_table(&table, &path)?;
    log::info!("wrote {} ({} x {})", path.display(), table.len(), table.dim());
    Ok(())
}

fn eval_config(c: &Common) -> anyhow::Result<EvalConfig> {
    let scheme = c.scheme.unwrap_or(Scheme::Basic);
    if c.n.is_some() && !matches!(scheme, Scheme::Pseudo | Scheme::Manual) {
        bail!(UsageError(format!("--n applies to pseudo and manual feedback, not {scheme}")));
    }
    if c.alrf_iters.is_some() && scheme != Scheme::Alrf {
        bail!(UsageError(format!("--alrf-iters applies to alrf, not {scheme}")));
    }
    let alrf = AlrfConfig {
        iterations: c.alrf_iters.unwrap_or(AlrfConfig::default().iterations),
        seed: c.seed.unwrap_or(0),
        ..Default::default()
    };
    Ok(EvalConfig {
        metric: c.metric.unwrap_or_default(),
        scheme,
        rf: RfConfig {
            n: c.n.unwrap_or(RfConfig::default().n),
            ..Default::default()
        },
        alrf,
    })
}

fn write_trace(out: &Path, stem: &str, o: &EvalOutput) -> anyhow::Result<()> {
    let path = out.join(format!("{stem}.trace.jsonl"));
    let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
    for (q, trace) in &o.traces {
        for r in trace {
            let line = serde_json::json!({
                "query": q,
                "iteration": r.iteration,
                "shown": r.shown,
                "labels": r.labels,
                "nmrr": r.anmrr,
            });
            writeln!(f, "{line}")?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn eval(c: &Common) -> anyhow::Result<()> {
    let cfg = eval_config(c)?;
    let spec = c.dataset()?;
    let mut jobs: Vec<(FeatureTable, FeedbackOracle)> = Vec::new();
    if spec == "synthetic" {
        jobs.push(gaussian_blobs(&BlobSpec::default(), c.seed.unwrap_or(0)));
    } else {
        let ds = load_dataset(spec)?;
        let dir = c.features_or("features");
        for kind in c.kinds()? {
            let desc: cbir_core::vector::DescriptorKind = kind.parse()?;
            let path = dir.join(store::table_file_name(&ds.name, &desc));
            if !path.exists() {
                bail!(UsageError(format!("missing feature table {}; run `extract` or `ingest`", path.display())));
            }
            jobs.push((store::load_table(&path)?, FeedbackOracle::from_dataset(&ds)));
        }
    }
    let out = c.out_or("reports");
    let mut reports = Vec::new();
    for (table, oracle) in &jobs {
        let o = evaluate(table, oracle, &cfg)?;
        write_report(&o.report, &out)?;
        if cfg.scheme == Scheme::Alrf {
            write_trace(&out, &report_stem(&o.report), &o)?;
        }
        if !o.report.skipped.is_empty() {
            log::warn!("{} queries skipped for an empty ground truth", o.report.skipped.len());
        }
        reports.push(o.report);
    }
    print!("{}", table_tsv(&reports));
    Ok(())
}

fn collect_reports(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json") && !f.to_string_lossy().ends_with(".labels.json"))
                .collect();
            v.sort();
            files.extend(v);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            bail!(UsageError(format!("no report at {}", p.display())));
        }
    }
    if files.is_empty() {
        bail!(UsageError("no report files given".into()));
    }
    Ok(files)
}

pub fn report(c: &Common, paths: &[PathBuf]) -> anyhow::Result<()> {
    let reports = collect_reports(paths)?
        .iter()
        .map(|p| read_report(p))
        .collect::<cbir_core::error::Result<Vec<_>>>()?;
    let rows = merge_reports(&reports)?;
    let text = merged_tsv(&rows);
    if let Some(out) = &c.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("merged.tsv"), &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn serve(c: &Common, port: u16, ui: Option<PathBuf>, images: &[PathBuf], ttl_minutes: u64) -> anyhow::Result<()> {
    let mut catalog = Catalog::new();
    catalog.load_dir(&c.features_or("features"), c.kinds.as_deref())?;
    for dir in images.iter().cloned().chain(c.dataset.iter().map(PathBuf::from)) {
        if dir.is_dir() {
            catalog.attach_images(Dataset::load(&dir)?);
        }
    }
    if catalog.datasets.is_empty() {
        bail!(UsageError("no feature tables found to serve".into()));
    }
    let state = AppState::new(catalog, Sessions::new(Duration::from_secs(60 * ttl_minutes)));
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    tokio::runtime::Runtime::new()?.block_on(cbir_service::serve(addr, state, ui))?;
    Ok(())
}

pub const DEFAULT_SAMPLE_CAP: usize = TRAINING_SAMPLE_CAP;
