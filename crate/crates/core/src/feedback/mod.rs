//! Relevance feedback: query expansion with rank fusion (pseudo and
//! simulated manual feedback) and SVM-based active learning.

pub mod alrf;
pub mod svm;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::retrieval::{rank, rank_by_id, Hit, Metric, RankedList};
use crate::store::FeatureTable;

pub use alrf::{alrf_select, alrf_session, AlrfConfig, AlrfOutcome, AlrfSession, HiKernel, TraceRecord};
pub use svm::{train_svm, SvmModel};

/// Answers relevance questions from class labels: an image is relevant to
/// a query when both share a class.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackOracle {
    labels: Vec<usize>,
    class_sizes: Vec<usize>,
}

impl FeedbackOracle {
    pub fn new(labels: Vec<usize>) -> Self {
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let mut class_sizes = vec![0; n_classes];
        for &l in &labels {
            class_sizes[l] += 1;
        }
        Self { labels, class_sizes }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::new(ds.labels())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_of(&self, id: u32) -> Result<usize> {
        self.labels.get(id as usize).copied().ok_or(Error::UnknownId(id))
    }

    pub fn is_relevant(&self, query: u32, id: u32) -> Result<bool> {
        Ok(self.class_of(query)? == self.class_of(id)?)
    }

    /// Ground-truth size of a query: its class size minus itself.
    pub fn ground_truth_size(&self, query: u32) -> Result<usize> {
        Ok(self.class_sizes[self.class_of(query)?] - 1)
    }
}

/// How the n+1 component rankings of an expanded query are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Mean rank; ties by mean score, then id. Fused scores are mean ranks.
    #[default]
    MeanRank,
    /// Mean metric score; ties by id.
    MeanScore,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::MeanRank => "mean_rank",
            Fusion::MeanScore => "mean_score",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_rank" => Ok(Fusion::MeanRank),
            "mean_score" => Ok(Fusion::MeanScore),
            _ => Err(Error::InvalidParameter(format!("unknown fusion rule `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    /// Number of expansion images.
    pub n: usize,
    pub fusion: Fusion,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            n: 5,
            fusion: Fusion::MeanRank,
        }
    }
}

/// Result of an expansion scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfOutcome {
    pub list: RankedList,
    /// Images used as additional queries, in the order they were found.
    pub expansion: Vec<u32>,
    /// Requested expansion images that could not be found.
    pub shortfall: usize,
}

/// Fuses full-table rankings into one list. The input order does not matter.
///
/// All lists must rank the same id set. With [`Fusion::MeanRank`] the output
/// scores are mean 1-based ranks (lower is better).
pub fn fuse(lists: &[RankedList], fusion: Fusion) -> Result<RankedList> {
    if lists.is_empty() {
        return Err(Error::Empty("component rankings".into()));
    }
    let mut sorted: Vec<&RankedList> = lists.iter().collect();
    sorted.sort_by_key(|l| (l.query_id.is_none(), l.query_id));
    let first = sorted[0];
    let metric = first.metric;
    let n = first.len();
    let mut pos: HashMap<u32, usize> = HashMap::with_capacity(n);
    for (p, h) in first.hits.iter().enumerate() {
        pos.insert(h.id, p);
    }
    let mut rank_sum = vec![0.0f64; n];
    let mut score_sum = vec![0.0f64; n];
    for l in &sorted {
        if l.len() != n || l.metric != metric {
            return Err(Error::InvalidParameter("component rankings differ in length or metric".into()));
        }
        for (r, h) in l.hits.iter().enumerate() {
            let p = *pos.get(&h.id).ok_or(Error::UnknownId(h.id))?;
            rank_sum[p] += (r + 1) as f64;
            score_sum[p] += h.score;
        }
    }
    let k = sorted.len() as f64;
    let mut rows: Vec<(u32, f64, f64)> = first
        .hits
        .iter()
        .enumerate()
        .map(|(p, h)| (h.id, rank_sum[p] / k, score_sum[p] / k))
        .collect();
    let hits = match fusion {
        Fusion::MeanRank => {
            rows.sort_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then(metric.compare(a.2, b.2))
                    .then(a.0.cmp(&b.0))
            });
            rows.into_iter().map(|(id, r, _)| Hit { id, score: r }).collect()
        }
        Fusion::MeanScore => {
            let mut hits: Vec<Hit> = rows.into_iter().map(|(id, _, s)| Hit { id, score: s }).collect();
            RankedList::sort_hits(metric, &mut hits);
            hits
        }
    };
    Ok(RankedList {
        query_id: first.query_id,
        metric,
        hits,
    })
}

/// Ranks the table with the query plus `expansion` as extra queries and
/// fuses the results, dropping the query. An empty expansion gives the
/// basic ranking.
pub fn expand_query(
    query_id: u32,
    table: &FeatureTable,
    metric: Metric,
    expansion: &[u32],
    fusion: Fusion,
) -> Result<RankedList> {
    if expansion.is_empty() {
        return basic(query_id, table, metric);
    }
    let mut lists = Vec::with_capacity(expansion.len() + 1);
    for &id in std::iter::once(&query_id).chain(expansion) {
        lists.push(rank_by_id(id, table, metric, false)?);
    }
    let mut fused = fuse(&lists, fusion)?;
    fused.query_id = Some(query_id);
    fused.hits.retain(|h| h.id != query_id);
    Ok(fused)
}

/// Pseudo relevance feedback: the top `n` basic results are assumed
/// relevant and used as extra queries. The query is excluded from the output.
pub fn pseudo_rf(query_id: u32, table: &FeatureTable, metric: Metric, cfg: &RfConfig) -> Result<RfOutcome> {
    if table.len() < cfg.n + 1 {
        return Err(Error::InvalidParameter(format!(
            "pseudo feedback with n = {} needs at least {} images, table has {}",
            cfg.n,
            cfg.n + 1,
            table.len()
        )));
    }
    let basic = rank_by_id(query_id, table, metric, true)?;
    if cfg.n == 0 {
        return Ok(RfOutcome {
            list: basic,
            expansion: Vec::new(),
            shortfall: 0,
        });
    }
    let expansion: Vec<u32> = basic.hits.iter().take(cfg.n).map(|h| h.id).collect();
    let list = expand_query(query_id, table, metric, &expansion, cfg.fusion)?;
    Ok(RfOutcome {
        list,
        expansion,
        shortfall: 0,
    })
}

/// Simulated manual feedback: the first `n` basic results the oracle marks
/// relevant become extra queries. Missing ones are reported as shortfall.
pub fn manual_rf_simulated(
    query_id: u32,
    table: &FeatureTable,
    metric: Metric,
    cfg: &RfConfig,
    oracle: &FeedbackOracle,
) -> Result<RfOutcome> {
    let basic = rank_by_id(query_id, table, metric, true)?;
    let mut expansion = Vec::with_capacity(cfg.n);
    for h in &basic.hits {
        if expansion.len() == cfg.n {
            break;
        }
        if oracle.is_relevant(query_id, h.id)? {
            expansion.push(h.id);
        }
    }
    let shortfall = cfg.n - expansion.len();
    if shortfall > 0 {
        log::debug!("query {query_id}: only {} relevant images for n = {}", expansion.len(), cfg.n);
    }
    if expansion.is_empty() {
        return Ok(RfOutcome {
            list: basic,
            expansion,
            shortfall,
        });
    }
    let list = expand_query(query_id, table, metric, &expansion, cfg.fusion)?;
    Ok(RfOutcome {
        list,
        expansion,
        shortfall,
    })
}

/// Basic retrieval with the query excluded from the output.
pub fn basic(query_id: u32, table: &FeatureTable, metric: Metric) -> Result<RankedList> {
    rank(table.vector(query_id)?, Some(query_id), table, metric, true)
}
