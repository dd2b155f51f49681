//! `cbir`: extract descriptors, train quantizers, ingest vectors, evaluate
//! retrieval schemes, merge reports and serve the query API.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Common;

/// Bad invocation: reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "cbir", version, about = "Content-based image retrieval benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract descriptor tables (skips tables already complete).
    Extract(Common),
    /// Train codebooks or GMMs for local descriptor kinds.
    Codebook {
        #[command(flatten)]
        common: Common,
        /// Codebook size or number of GMM components.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = commands::DEFAULT_SAMPLE_CAP)]
        sample_cap: usize,
    },
    /// Import precomputed vectors (binary table or delimited text).
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run every image as a query and write report files.
    Eval(Common),
    /// Merge reports into a table sorted by average rank.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report JSON files or directories holding them.
        paths: Vec<PathBuf>,
    },
    /// Serve the HTTP query and feedback API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Static files for the browser UI.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Extra dataset directories for thumbnails.
        #[arg(long)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 30)]
        session_ttl_minutes: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.cmd {
        Cmd::Extract(c) | Cmd::Eval(c) => c,
        Cmd::Codebook { common, .. }
        | Cmd::Ingest { common, .. }
        | Cmd::Report { common, .. }
        | Cmd::Serve { common, .. } => common,
    }
    .clone()
    .resolve()?;
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(UsageError("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    match cli.cmd {
        Cmd::Extract(_) => commands::extract(&common),
        Cmd::Codebook { k, sample_cap, .. } => commands::codebook(&common, k, sample_cap),
        Cmd::Ingest { input, .. } => commands::ingest(&common, &input),
        Cmd::Eval(_) => commands::eval(&common),
        Cmd::Report { paths, .. } => commands::report(&common, &paths),
        Cmd::Serve {
            port,
            ui,
            images,
            session_ttl_minutes,
            ..
        } => commands::serve(&common, port, ui, &images, session_ttl_minutes),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
