//! All-queries evaluation: every image of the table is used as a query and
//! scored against class-based ground truth.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{
    alrf_session, basic, manual_rf_simulated, pseudo_rf, AlrfConfig, FeedbackOracle, HiKernel, RfConfig, TraceRecord,
};
use crate::metrics::{self, QueryJudgment, EQC_BASE, PR_LEVELS, P_AT_K};
use crate::retrieval::Metric;
use crate::store::FeatureTable;

/// Query-cost multiplier of active-learning feedback at the default setup.
pub const ALRF_EQC_MULTIPLIER: u64 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Basic,
    Pseudo,
    Manual,
    Alrf,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Basic, Scheme::Pseudo, Scheme::Manual, Scheme::Alrf];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Basic => "basic",
            Scheme::Pseudo => "pseudo",
            Scheme::Manual => "manual",
            Scheme::Alrf => "alrf",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub metric: Metric,
    pub scheme: Scheme,
    pub rf: RfConfig,
    pub alrf: AlrfConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            scheme: Scheme::Basic,
            rf: RfConfig::default(),
            alrf: AlrfConfig::default(),
        }
    }
}

impl EvalConfig {
    /// Number of basic-query costs one query of this scheme amounts to.
    pub fn eqc_multiplier(&self) -> u64 {
        match self.scheme {
            Scheme::Basic => 1,
            Scheme::Pseudo | Scheme::Manual => self.rf.n.max(1) as u64,
            Scheme::Alrf => ALRF_EQC_MULTIPLIER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: u32,
    pub ng: usize,
    pub nmrr: f64,
    pub average_precision: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionEntry {
    pub k: usize,
    pub value: f64,
    /// Queries whose ranked list was shorter than `k`.
    pub truncated_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortfallStats {
    pub queries_with_shortfall: usize,
    pub total: usize,
    pub max: usize,
}

/// Aggregate results of one (table, metric, scheme) evaluation. All
/// measures are stored as fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub features: String,
    pub dim: usize,
    pub metric: Metric,
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alrf_iterations: Option<usize>,
    pub n_images: usize,
    pub n_queries: usize,
    /// Queries skipped for an empty ground truth.
    pub skipped: Vec<u32>,
    pub anmrr: f64,
    pub map: f64,
    pub precision: Vec<PrecisionEntry>,
    pub pr_curve: Vec<f64>,
    pub eqc: u64,
    pub eqc_multiplier: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<ShortfallStats>,
    pub per_query: Vec<QueryResult>,
}

impl EvalReport {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.precision.iter().find(|p| p.k == k).map(|p| p.value)
    }

    /// Row label: descriptor plus scheme details when not basic.
    pub fn label(&self) -> String {
        match (self.scheme, self.n) {
            (Scheme::Basic, _) => self.features.clone(),
            (s, Some(n)) => format!("{} [{s} n={n}]", self.features),
            (s, None) => format!("{} [{s}]", self.features),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub judgments: Vec<QueryJudgment>,
    /// Active-learning traces per query, in query order.
    pub traces: Vec<(u32, Vec<TraceRecord>)>,
}

struct QueryRun {
    judgment: QueryJudgment,
    shortfall: Option<usize>,
    trace: Option<Vec<TraceRecord>>,
}

fn run_query(
    q: u32,
    table: &FeatureTable,
    oracle: &FeedbackOracle,
    cfg: &EvalConfig,
    kernel: Option<&HiKernel>,
) -> Result<QueryRun> {
    let (ids, shortfall, trace) = match cfg.scheme {
        Scheme::Basic => (basic(q, table, cfg.metric)?.ids(), None, None),
        Scheme::Pseudo => (pseudo_rf(q, table, cfg.metric, &cfg.rf)?.list.ids(), None, None),
        Scheme::Manual => {
            let out = manual_rf_simulated(q, table, cfg.metric, &cfg.rf, oracle)?;
            (out.list.ids(), Some(out.shortfall), None)
        }
        Scheme::Alrf => {
            let kernel = kernel.expect("kernel prepared for active learning");
            let out = alrf_session(q, kernel, cfg.metric, oracle, &cfg.alrf)?;
            (out.list.ids(), None, Some(out.trace))
        }
    };
    Ok(QueryRun {
        judgment: QueryJudgment::from_ranking(q, &ids, oracle)?,
        shortfall,
        trace,
    })
}

/// Evaluates `cfg` with every table image as a query. Results do not
/// depend on the number of worker threads.
pub fn evaluate(table: &FeatureTable, oracle: &FeedbackOracle, cfg: &EvalConfig) -> Result<EvalOutput> {
    if table.is_empty() {
        return Err(Error::Empty("feature table".into()));
    }
    table.check_ids(oracle.len())?;
    if cfg.scheme == Scheme::Alrf {
        cfg.alrf.validate()?;
    }
    let kernel = if cfg.scheme == Scheme::Alrf {
        Some(HiKernel::cached(table)?)
    } else {
        None
    };
    let mut queries: Vec<u32> = table.ids().to_vec();
    queries.sort_unstable();
    let (skipped, active): (Vec<u32>, Vec<u32>) = queries
        .into_iter()
        .partition(|&q| oracle.ground_truth_size(q).map(|ng| ng == 0).unwrap_or(false));
    for q in &skipped {
        log::warn!("query {q}: no other image of its class; skipped");
    }
    if active.is_empty() {
        return Err(Error::Empty("no query has a non-empty ground truth".into()));
    }
    let runs = active
        .par_iter()
        .map(|&q| run_query(q, table, oracle, cfg, kernel.as_ref()))
        .collect::<Result<Vec<QueryRun>>>()?;

    let judgments: Vec<QueryJudgment> = runs.iter().map(|r| r.judgment.clone()).collect();
    let per_query: Vec<QueryResult> = runs
        .iter()
        .map(|r| QueryResult {
            query_id: r.judgment.query_id,
            ng: r.judgment.ng,
            nmrr: metrics::nmrr(&r.judgment).expect("non-empty ground truth"),
            average_precision: metrics::average_precision(&r.judgment).expect("non-empty ground truth"),
            shortfall: r.shortfall,
        })
        .collect();
    let nq = judgments.len() as f64;
    let precision = P_AT_K
        .iter()
        .map(|&k| {
            let ps: Vec<_> = judgments.iter().map(|j| metrics::precision_at_k(j, k)).collect();
            PrecisionEntry {
                k,
                value: ps.iter().map(|p| p.value).sum::<f64>() / nq,
                truncated_queries: ps.iter().filter(|p| p.truncated).count(),
            }
        })
        .collect();
    let shortfall = (cfg.scheme == Scheme::Manual).then(|| {
        let s: Vec<usize> = runs.iter().filter_map(|r| r.shortfall).collect();
        ShortfallStats {
            queries_with_shortfall: s.iter().filter(|&&v| v > 0).count(),
            total: s.iter().sum(),
            max: s.iter().copied().max().unwrap_or(0),
        }
    });
    let multiplier = cfg.eqc_multiplier();
    let report = EvalReport {
        dataset: table.dataset.clone(),
        features: table.kind.name().to_string(),
        dim: table.dim(),
        metric: cfg.metric,
        scheme: cfg.scheme,
        n: matches!(cfg.scheme, Scheme::Pseudo | Scheme::Manual).then_some(cfg.rf.n),
        alrf_iterations: (cfg.scheme == Scheme::Alrf).then_some(cfg.alrf.iterations),
        n_images: oracle.len(),
        n_queries: judgments.len(),
        skipped,
        anmrr: metrics::anmrr(&judgments)?,
        map: metrics::map(&judgments)?,
        precision,
        pr_curve: metrics::mean_pr_curve(&judgments)?.to_vec(),
        eqc: metrics::eqc(table.dim(), EQC_BASE, multiplier),
        eqc_multiplier: multiplier,
        shortfall,
        per_query,
    };
    debug_assert_eq!(report.pr_curve.len(), PR_LEVELS);
    let traces = runs
        .into_iter()
        .filter_map(|r| r.trace.map(|t| (r.judgment.query_id, t)))
        .collect();
    Ok(EvalOutput {
        report,
        judgments,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gaussian_blobs, BlobSpec};

    #[test]
    fn schemes_parse() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("rocchio".parse::<Scheme>().is_err());
    }

    #[test]
    fn basic_smoke_and_thread_independence() {
        let (t, oracle) = gaussian_blobs(&BlobSpec::default(), 1);
        let cfg = EvalConfig::default();
        let a = evaluate(&t, &oracle, &cfg).unwrap();
        assert_eq!(a.report.n_queries, 150);
        assert!(a.report.anmrr >= 0.0 && a.report.anmrr <= 1.0);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = single.install(|| evaluate(&t, &oracle, &cfg).unwrap());
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn eqc_multipliers() {
        let mut cfg = EvalConfig::default();
        assert_eq!(cfg.eqc_multiplier(), 1);
        cfg.scheme = Scheme::Pseudo;
        assert_eq!(cfg.eqc_multiplier(), 5);
        cfg.scheme = Scheme::Alrf;
        assert_eq!(cfg.eqc_multiplier(), 20);
    }

    #[test]
    fn manual_reports_shortfall() {
        let (t, oracle) = gaussian_blobs(
            &BlobSpec {
                per_class: 4,
                ..Default::default()
            },
            2,
        );
        let cfg = EvalConfig {
            scheme: Scheme::Manual,
            ..Default::default()
        };
        let out = evaluate(&t, &oracle, &cfg).unwrap();
        let s = out.report.shortfall.unwrap();
        assert_eq!(s.queries_with_shortfall, 12);
        assert_eq!(s.total, 12 * 2);
    }
}
