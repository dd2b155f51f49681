//! Report tables and average-rank comparison across reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

pub const TABLE_HEADER: &str = "features\tANMRR\tMAP\tP@5\tP@10\tP@50\tP@100\tP@1000\tEQC";

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// One row per report: ANMRR as a fraction, MAP and P@k as percentages.
pub fn table_tsv(reports: &[EvalReport]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.label(),
            r.anmrr,
            pct(Some(r.map)),
            pct(r.precision_at(5)),
            pct(r.precision_at(10)),
            pct(r.precision_at(50)),
            pct(r.precision_at(100)),
            pct(r.precision_at(1000)),
            r.eqc
        );
    }
    s
}

/// Interpolated precision-recall curve as `recall\tprecision` rows.
pub fn pr_tsv(report: &EvalReport) -> String {
    let mut s = String::from("recall\tprecision\n");
    for (l, p) in report.pr_curve.iter().enumerate() {
        let _ = writeln!(s, "{:.1}\t{:.6}", l as f64 / 10.0, p);
    }
    s
}

/// File stem `<dataset>.<features>.<scheme>[-n<n>].<metric>`.
pub fn report_stem(r: &EvalReport) -> String {
    let scheme = match r.n {
        Some(n) => format!("{}-n{n}", r.scheme),
        None => r.scheme.to_string(),
    };
    format!("{}.{}.{}.{}", r.dataset, r.features, scheme, r.metric)
}

/// Writes `<stem>.json`, `<stem>.tsv` and `<stem>.pr.tsv` into `dir`.
pub fn write_report(r: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = report_stem(r);
    let files = [
        (format!("{stem}.json"), serde_json::to_string_pretty(r).expect("report serializes") + "\n"),
        (format!("{stem}.tsv"), table_tsv(std::slice::from_ref(r))),
        (format!("{stem}.pr.tsv"), pr_tsv(r)),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

/// Measures entering the average rank, with `true` when higher is better.
pub const RANKED_MEASURES: [(&str, bool); 7] = [
    ("ANMRR", false),
    ("MAP", true),
    ("P@5", true),
    ("P@10", true),
    ("P@50", true),
    ("P@100", true),
    ("EQC", false),
];

fn measure(r: &EvalReport, name: &str) -> f64 {
    match name {
        "ANMRR" => r.anmrr,
        "MAP" => r.map,
        "EQC" => r.eqc as f64,
        p => {
            let k: usize = p[2..].parse().expect("P@k measure");
            r.precision_at(k).unwrap_or(0.0)
        }
    }
}

/// 1-based ranks, tied values sharing the mean of their positions.
pub fn fractional_ranks(values: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        if higher_is_better {
            c.reverse()
        } else {
            c
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedRow {
    pub features: String,
    pub average_rank: f64,
    /// (dataset, scheme, metric) groups the descriptor appears in.
    pub groups: usize,
    pub mean_anmrr: f64,
    pub eqc: u64,
}

/// Ranks descriptors per measure within each (dataset, scheme, metric)
/// group and averages the ranks over all groups and measures.
pub fn merge_reports(reports: &[EvalReport]) -> Result<Vec<MergedRow>> {
    if reports.is_empty() {
        return Err(Error::Empty("reports".into()));
    }
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for r in reports {
        let n = *sizes.entry(&r.dataset).or_insert(r.n_images);
        if n != r.n_images {
            return Err(Error::InconsistentReports(format!(
                "dataset `{}` appears with {n} and {} images",
                r.dataset, r.n_images
            )));
        }
    }
    let mut groups: BTreeMap<(String, String, String), Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        let scheme = match r.n {
            Some(n) => format!("{}-n{n}", r.scheme),
            None => r.scheme.to_string(),
        };
        groups
            .entry((r.dataset.clone(), scheme, r.metric.to_string()))
            .or_default()
            .push(r);
    }
    struct Acc {
        rank_sum: f64,
        rank_count: usize,
        groups: usize,
        anmrr_sum: f64,
        eqc: u64,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for (key, members) in &groups {
        let mut names: Vec<&str> = members.iter().map(|r| r.features.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InconsistentReports(format!(
                "descriptor `{}` reported twice for {} / {} / {}",
                w[0], key.0, key.1, key.2
            )));
        }
        for (name, higher) in RANKED_MEASURES {
            let values: Vec<f64> = members.iter().map(|r| measure(r, name)).collect();
            for (r, rank) in members.iter().zip(fractional_ranks(&values, higher)) {
                let a = acc.entry(r.features.clone()).or_insert(Acc {
                    rank_sum: 0.0,
                    rank_count: 0,
                    groups: 0,
                    anmrr_sum: 0.0,
                    eqc: 0,
                });
                a.rank_sum += rank;
                a.rank_count += 1;
            }
        }
        for r in members {
            let a = acc.get_mut(&r.features).expect("entry created above");
            a.groups += 1;
            a.anmrr_sum += r.anmrr;
            a.eqc = a.eqc.max(r.eqc / r.eqc_multiplier.max(1));
        }
    }
    let mut rows: Vec<MergedRow> = acc
        .into_iter()
        .map(|(features, a)| MergedRow {
            features,
            average_rank: a.rank_sum / a.rank_count as f64,
            groups: a.groups,
            mean_anmrr: a.anmrr_sum / a.groups as f64,
            eqc: a.eqc,
        })
        .collect();
    rows.sort_by(|a, b| a.average_rank.total_cmp(&b.average_rank).then(a.features.cmp(&b.features)));
    Ok(rows)
}

pub fn merged_tsv(rows: &[MergedRow]) -> String {
    let mut s = String::from("features\tmean ANMRR\tEQC\tgroups\taverage rank\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.4}\t{}\t{}\t{:.3}",
            r.features, r.mean_anmrr, r.eqc, r.groups, r.average_rank
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractional_ranks_share_ties() {
        assert_eq!(fractional_ranks(&[0.3, 0.1, 0.3, 0.5], false), vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&[0.3, 0.1, 0.3, 0.5], true), vec![2.5, 4.0, 2.5, 1.0]);
        assert_eq!(fractional_ranks(&[7.0], true), vec![1.0]);
    }
}
