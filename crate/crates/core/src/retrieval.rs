//! Distances, similarities and exhaustive ranking.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::FeatureTable;

pub const CHI_SQUARE_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
    Manhattan,
    #[serde(rename = "chisq")]
    ChiSquare,
    #[serde(rename = "histint")]
    HistIntersection,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Euclidean,
        Metric::Cosine,
        Metric::Manhattan,
        Metric::ChiSquare,
        Metric::HistIntersection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Manhattan => "manhattan",
            Metric::ChiSquare => "chisq",
            Metric::HistIntersection => "histint",
        }
    }

    /// Higher scores are better.
    pub fn is_similarity(self) -> bool {
        self == Metric::HistIntersection
    }

    pub fn requires_nonnegative(self) -> bool {
        matches!(self, Metric::ChiSquare | Metric::HistIntersection)
    }

    /// Orders two scores best-first.
    pub fn compare(self, a: f64, b: f64) -> Ordering {
        if self.is_similarity() {
            b.total_cmp(&a)
        } else {
            a.total_cmp(&b)
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

fn check_nonnegative(metric: Metric, v: &[f32]) -> Result<()> {
    match v.iter().position(|&x| x < 0.0) {
        Some(index) => Err(Error::NegativeEntry {
            metric: metric.name(),
            index,
            value: v[index] as f64,
        }),
        None => Ok(()),
    }
}

/// Score of `x` against `y` without validation. Accumulates in f64.
pub(crate) fn score_unchecked(metric: Metric, x: &[f32], y: &[f32]) -> f64 {
    let pairs = x.iter().zip(y).map(|(&a, &b)| (a as f64, b as f64));
    match metric {
        Metric::Euclidean => pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        Metric::Manhattan => pairs.map(|(a, b)| (a - b).abs()).sum(),
        Metric::ChiSquare => pairs.map(|(a, b)| (a - b) * (a - b) / (a + b + CHI_SQUARE_EPS)).sum(),
        Metric::HistIntersection => pairs.map(|(a, b)| a.min(b)).sum(),
        Metric::Cosine => {
            let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
            for (a, b) in pairs {
                dot += a * b;
                nx += a * a;
                ny += b * b;
            }
            if nx == 0.0 || ny == 0.0 {
                1.0
            } else {
                1.0 - dot / (nx.sqrt() * ny.sqrt())
            }
        }
    }
}

/// Distance (or, for histogram intersection, similarity) between two vectors.
pub fn distance(metric: Metric, x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if metric.requires_nonnegative() {
        check_nonnegative(metric, x)?;
        check_nonnegative(metric, y)?;
    }
    Ok(score_unchecked(metric, x, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u32,
    pub score: f64,
}

/// Ranked retrieval result, best first; ties are broken by ascending id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: Option<u32>,
    pub metric: Metric,
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.hits.iter().map(|h| h.id).collect()
    }

    /// Sorts `hits` best-first under `metric`, ties by ascending id.
    pub fn sort_hits(metric: Metric, hits: &mut [Hit]) {
        hits.sort_by(|a, b| metric.compare(a.score, b.score).then(a.id.cmp(&b.id)));
    }
}

/// Exhaustive ranking of `table` against `query`.
///
/// `query_id` identifies the query image when it is part of the collection;
/// with `exclude_query` its row is dropped from the output.
pub fn rank(
    query: &[f32],
    query_id: Option<u32>,
    table: &FeatureTable,
    metric: Metric,
    exclude_query: bool,
) -> Result<RankedList> {
    if query.len() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            actual: query.len(),
        });
    }
    if metric.requires_nonnegative() {
        check_nonnegative(metric, query)?;
        if table.min_value() < 0.0 {
            let (id, row) = table
                .iter()
                .find(|(_, r)| r.iter().any(|&v| v < 0.0))
                .expect("table has a negative entry");
            let index = row.iter().position(|&v| v < 0.0).unwrap_or(0);
            log::debug!("negative entry in row of image {id}");
            return Err(Error::NegativeEntry {
                metric: metric.name(),
                index,
                value: row[index] as f64,
            });
        }
    }
    let skip = if exclude_query { query_id } else { None };
    let mut hits: Vec<Hit> = if table.len() >= 4096 {
        table
            .ids()
            .par_iter()
            .enumerate()
            .filter(|(_, &id)| Some(id) != skip)
            .map(|(p, &id)| Hit {
                id,
                score: score_unchecked(metric, query, table.row(p)),
            })
            .collect()
    } else {
        table
            .iter()
            .filter(|(id, _)| Some(*id) != skip)
            .map(|(id, row)| Hit {
                id,
                score: score_unchecked(metric, query, row),
            })
            .collect()
    };
    RankedList::sort_hits(metric, &mut hits);
    Ok(RankedList {
        query_id,
        metric,
        hits,
    })
}

/// Ranks the table against one of its own rows.
pub fn rank_by_id(id: u32, table: &FeatureTable, metric: Metric, exclude_query: bool) -> Result<RankedList> {
    let q = table.vector(id)?;
    rank(q, Some(id), table, metric, exclude_query)
}
