//! Derived metrics and cross-run aggregation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty series or window")]
    Empty,
}

/// Mean and sample standard deviation of a non-empty set of values.
///
/// Values are sorted before summation, so the result does not depend on input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// `(m_strategy - m_optimal) / m_optimal`; undefined when Optimal never misses.
pub fn normalized_miss_rate(m_strategy: f64, m_optimal: f64) -> Option<f64> {
    (m_optimal > 0.0).then(|| (m_strategy - m_optimal) / m_optimal)
}

/// Mean of `a - b` over the last `window` entries (clamped to the series length).
pub fn hit_rate_delta(a: &[f64], b: &[f64], window: usize) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let take = window.min(a.len());
    if take == 0 {
        return Err(MetricsError::Empty);
    }
    let start = a.len() - take;
    Ok(a[start..].iter().zip(&b[start..]).map(|(x, y)| x - y).sum::<f64>() / take as f64)
}

/// Spearman rank correlation with average ranks for ties. `None` when fewer
/// than two points or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Everything a single simulation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Grouping labels such as policy, trace and seed.
    pub labels: BTreeMap<String, String>,
    /// The fully resolved configuration the run used.
    pub config: serde_json::Value,
    pub seed: u64,
    pub packets: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_rate: f64,
    pub hit_rate: f64,
    /// Miss rate over the trailing half of the reporting intervals.
    pub trailing_miss_rate: Option<f64>,
    pub optimal_misses: Option<u64>,
    pub normalized_miss_rate: Option<f64>,
    pub trailing_normalized_miss_rate: Option<f64>,
    pub report_period_s: f64,
    pub hit_rate_series: Vec<f64>,
    pub evictions: u64,
    pub eti_decisions: u64,
}

impl RunSummary {
    pub fn label(&self, key: &str) -> &str {
        self.labels.get(key).map(String::as_str).unwrap_or("")
    }
}

/// Per-group statistics over runs sharing the same label values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: Vec<(String, String)>,
    pub runs: usize,
    pub miss_rate: MeanStd,
    pub hit_rate: MeanStd,
    pub normalized_miss_rate: Option<MeanStd>,
    pub trailing_miss_rate: Option<MeanStd>,
}

/// Groups runs by the values of `group_by` labels; groups come out in label order.
pub fn aggregate(runs: &[RunSummary], group_by: &[&str]) -> Vec<GroupRow> {
    let mut groups: BTreeMap<Vec<String>, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        let key = group_by.iter().map(|k| r.label(k).to_string()).collect();
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(values, members)| GroupRow {
            group: group_by.iter().map(|k| k.to_string()).zip(values).collect(),
            runs: members.len(),
            miss_rate: MeanStd::of(members.iter().map(|r| r.miss_rate)).expect("non-empty group"),
            hit_rate: MeanStd::of(members.iter().map(|r| r.hit_rate)).expect("non-empty group"),
            normalized_miss_rate: MeanStd::of(members.iter().filter_map(|r| r.normalized_miss_rate)),
            trailing_miss_rate: MeanStd::of(members.iter().filter_map(|r| r.trailing_miss_rate)),
        })
        .collect()
}

/// Columns: group labels, then `runs`, then mean/std pairs for miss rate,
/// hit rate, normalized miss rate and trailing miss rate.
pub fn write_groups_csv(rows: &[GroupRow], group_by: &[&str], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = group_by.iter().map(|s| s.to_string()).collect();
    header.extend(
        [
            "runs",
            "miss_rate_mean",
            "miss_rate_std",
            "hit_rate_mean",
            "hit_rate_std",
            "normalized_miss_rate_mean",
            "normalized_miss_rate_std",
            "trailing_miss_rate_mean",
            "trailing_miss_rate_std",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let pair = |m: Option<MeanStd>| match m {
        Some(m) => [m.mean.to_string(), m.std.to_string()],
        None => [String::new(), String::new()],
    };
    for row in rows {
        let mut rec: Vec<String> = row.group.iter().map(|(_, v)| v.clone()).collect();
        rec.push(row.runs.to_string());
        rec.extend(pair(Some(row.miss_rate)));
        rec.extend(pair(Some(row.hit_rate)));
        rec.extend(pair(row.normalized_miss_rate));
        rec.extend(pair(row.trailing_miss_rate));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
