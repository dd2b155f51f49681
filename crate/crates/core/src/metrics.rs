//! Retrieval-quality measures: AVR/NMRR/ANMRR, precision and recall at k,
//! average precision, interpolated precision-recall and the equivalent
//! query cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::FeedbackOracle;

/// Cut-offs reported for P@k.
pub const P_AT_K: [usize; 5] = [5, 10, 50, 100, 1000];
pub const PR_LEVELS: usize = 11;
/// Base vector length of the equivalent query cost.
pub const EQC_BASE: usize = 5;

/// Relevance of a ranked list for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryJudgment {
    pub query_id: u32,
    /// Ground-truth size NG.
    pub ng: usize,
    /// `rel[k]` for rank `k + 1`.
    pub rel: Vec<bool>,
}

impl QueryJudgment {
    pub fn new(query_id: u32, ng: usize, rel: Vec<bool>) -> Result<Self> {
        let hits = rel.iter().filter(|&&r| r).count();
        if hits > ng {
            return Err(Error::InvalidParameter(format!(
                "query {query_id}: {hits} relevant items retrieved but NG = {ng}"
            )));
        }
        Ok(Self { query_id, ng, rel })
    }

    /// Judges `ids` against class membership; the query never counts as relevant.
    pub fn from_ranking(query_id: u32, ids: &[u32], oracle: &FeedbackOracle) -> Result<Self> {
        let rel = ids
            .iter()
            .map(|&id| Ok(id != query_id && oracle.is_relevant(query_id, id)?))
            .collect::<Result<Vec<bool>>>()?;
        Self::new(query_id, oracle.ground_truth_size(query_id)?, rel)
    }

    pub fn hits(&self) -> usize {
        self.rel.iter().filter(|&&r| r).count()
    }
}

/// Average rank with `K = 2 NG`. Ranks beyond `K`, and ground-truth items
/// never retrieved, count as `1.25 K`. `None` when NG = 0.
pub fn avr(j: &QueryJudgment) -> Option<f64> {
    if j.ng == 0 {
        return None;
    }
    let k = 2 * j.ng;
    let penalty = 1.25 * k as f64;
    let mut sum = 0.0;
    let mut found = 0;
    for (i, _) in j.rel.iter().enumerate().filter(|(_, &r)| r) {
        let r = i + 1;
        sum += if r <= k { r as f64 } else { penalty };
        found += 1;
    }
    sum += (j.ng - found) as f64 * penalty;
    Some(sum / j.ng as f64)
}

/// Normalized modified retrieval rank in `[0, 1]`.
pub fn nmrr(j: &QueryJudgment) -> Option<f64> {
    let a = avr(j)?;
    let ng = j.ng as f64;
    let k = 2.0 * ng;
    Some((a - 0.5 * (1.0 + ng)) / (1.25 * k - 0.5 * (1.0 + ng)))
}

fn mean_over(js: &[QueryJudgment], f: impl Fn(&QueryJudgment) -> Option<f64>, what: &str) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in js {
        match f(j) {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => log::warn!("query {} has an empty ground truth; skipped in {what}", j.query_id),
        }
    }
    if n == 0 {
        return Err(Error::Empty(format!("no query with a non-empty ground truth for {what}")));
    }
    Ok(sum / n as f64)
}

pub fn anmrr(js: &[QueryJudgment]) -> Result<f64> {
    mean_over(js, nmrr, "ANMRR")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAt {
    pub value: f64,
    /// The list was shorter than `k`; the value is over the available prefix.
    pub truncated: bool,
}

pub fn precision_at_k(j: &QueryJudgment, k: usize) -> PrecisionAt {
    assert!(k >= 1, "precision cut-off must be positive");
    let m = k.min(j.rel.len());
    let hits = j.rel[..m].iter().filter(|&&r| r).count();
    PrecisionAt {
        value: if m == 0 { 0.0 } else { hits as f64 / m as f64 },
        truncated: m < k,
    }
}

/// Fraction of the ground truth within the first `k` results (0 when NG = 0).
pub fn recall_at_k(j: &QueryJudgment, k: usize) -> f64 {
    if j.ng == 0 {
        return 0.0;
    }
    let m = k.min(j.rel.len());
    j.rel[..m].iter().filter(|&&r| r).count() as f64 / j.ng as f64
}

/// Sum of precision at each relevant rank, divided by NG.
pub fn average_precision(j: &QueryJudgment) -> Option<f64> {
    if j.ng == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in j.rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / j.ng as f64)
}

pub fn map(js: &[QueryJudgment]) -> Result<f64> {
    mean_over(js, average_precision, "MAP")
}

/// Interpolated precision at recall 0.0, 0.1, ..., 1.0: the highest
/// precision at any rank whose recall reaches the level (0 if none does).
pub fn interpolated_pr(j: &QueryJudgment) -> Option<[f64; PR_LEVELS]> {
    if j.ng == 0 {
        return None;
    }
    let mut out = [0.0; PR_LEVELS];
    let mut hits = 0usize;
    // best[h] = max precision over ranks with exactly h hits
    let mut best = vec![0.0f64; j.ng + 1];
    for (i, &r) in j.rel.iter().enumerate() {
        if r {
            hits += 1;
        }
        let p = hits as f64 / (i + 1) as f64;
        best[hits] = best[hits].max(p);
    }
    for (level, o) in out.iter_mut().enumerate() {
        // recall h/NG >= level/10, compared exactly in integers
        *o = (0..=j.ng)
            .filter(|&h| 10 * h >= level * j.ng)
            .map(|h| best[h])
            .fold(0.0, f64::max);
    }
    Some(out)
}

/// Mean interpolated curve over queries with a non-empty ground truth.
pub fn mean_pr_curve(js: &[QueryJudgment]) -> Result<[f64; PR_LEVELS]> {
    let mut acc = [0.0; PR_LEVELS];
    let mut n = 0usize;
    for c in js.iter().filter_map(interpolated_pr) {
        acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no query with a non-empty ground truth for PR".into()));
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// Equivalent query cost `c * floor(len / base)`.
pub fn eqc(len: usize, base: usize, c: u64) -> u64 {
    assert!(base >= 1, "EQC base must be positive");
    c * (len / base) as u64
}
