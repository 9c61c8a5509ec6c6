//! Campaign metrics: immediate regret, top-fraction and threshold recall,
//! and average ranks across repetitions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::ObjectiveSense;

/// Floor substituted for zero regret before taking logarithms.
pub const LOG_IR_FLOOR: f64 = 1e-10;

/// Best-so-far minus reference minimum, both in minimisation space.
pub fn immediate_regret(best: f64, reference_min: f64) -> f64 {
    let ir = best - reference_min;
    if ir < 0.0 {
        if ir < -1e-12 {
            log::warn!("best value {best} lies below reference minimum {reference_min}");
        }
        return 0.0;
    }
    ir
}

pub fn log10_regret(ir: f64) -> f64 {
    ir.max(LOG_IR_FLOOR).log10()
}

/// Indices of the best `ceil(fraction * N)` targets; ties at the cutoff go
/// to the lowest index.
pub fn top_fraction_set(targets: &[f64], sense: ObjectiveSense, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("recall fraction must lie in (0, 1], got {fraction}")));
    }
    let k = ((fraction * targets.len() as f64).ceil() as usize).clamp(1, targets.len().max(1));
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let s = sense.sign();
        (s * targets[b]).total_cmp(&(s * targets[a])).then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Indices whose raw target is better than `threshold` in the library's sense.
pub fn threshold_set(targets: &[f64], sense: ObjectiveSense, threshold: f64) -> Vec<usize> {
    (0..targets.len()).filter(|&i| sense.better(targets[i], threshold)).collect()
}

fn overlap(sampled: &[usize], top: &[usize], n: usize) -> f64 {
    let mut mark = vec![false; n];
    sampled.iter().filter(|&&i| i < n).for_each(|&i| mark[i] = true);
    top.iter().filter(|&&i| mark[i]).count() as f64 / top.len() as f64
}

pub fn recall_top_fraction(sampled: &[usize], targets: &[f64], sense: ObjectiveSense, fraction: f64) -> Result<f64> {
    let top = top_fraction_set(targets, sense, fraction)?;
    Ok(overlap(sampled, &top, targets.len()))
}

pub fn recall_above_threshold(sampled: &[usize], targets: &[f64], sense: ObjectiveSense, threshold: f64) -> Result<f64> {
    let top = threshold_set(targets, sense, threshold);
    if top.is_empty() {
        return Err(Error::UndefinedMetric(format!("no candidate beats threshold {threshold}")));
    }
    Ok(overlap(sampled, &top, targets.len()))
}

/// Incremental recall counter for one campaign.
#[derive(Debug, Clone)]
pub struct RecallTracker {
    member: Vec<bool>,
    total: usize,
    found: usize,
}

impl RecallTracker {
    pub fn new(top: &[usize], n: usize) -> Result<Self> {
        if top.is_empty() {
            return Err(Error::UndefinedMetric("empty top set".into()));
        }
        let mut member = vec![false; n];
        top.iter().for_each(|&i| member[i] = true);
        Ok(Self { member, total: top.len(), found: 0 })
    }

    pub fn observe(&mut self, index: usize) {
        if let Some(m) = self.member.get_mut(index) {
            if *m {
                *m = false;
                self.found += 1;
            }
        }
    }

    pub fn recall(&self) -> f64 {
        self.found as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub mean: f64,
    pub se: f64,
}

/// Per-method mean rank (1 = highest recall) with standard error over
/// repetitions. `recalls[r][m]` is the final recall of method `m` in
/// repetition `r`; tied methods share the average of their ranks.
pub fn average_rank(recalls: &[Vec<f64>]) -> Result<Vec<RankSummary>> {
    let r = recalls.len();
    if r == 0 {
        return Err(Error::InvalidConfig("average rank needs at least one repetition".into()));
    }
    let m = recalls[0].len();
    if m < 2 || recalls.iter().any(|row| row.len() != m) {
        return Err(Error::InvalidConfig("average rank needs >= 2 methods in every repetition".into()));
    }
    let mut ranks = vec![Vec::with_capacity(r); m];
    for row in recalls {
        for (j, rank) in tied_ranks(row).into_iter().enumerate() {
            ranks[j].push(rank);
        }
    }
    Ok(ranks
        .iter()
        .map(|v| RankSummary { mean: crate::stats::mean(v), se: crate::stats::std_error(v) })
        .collect())
}

/// Ranks in descending order of value, averaging ties.
fn tied_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// One row of the long-format metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub evals: usize,
    pub metric_name: String,
    pub value: f64,
}

pub const METRICS_HEADER: &str = "method,seed,iteration,evals,metric_name,value";

pub fn write_metric_rows<W: Write>(out: &mut W, rows: &[MetricRow], header: bool) -> Result<()> {
    if header {
        writeln!(out, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.method, r.seed, r.iteration, r.evals, r.metric_name, r.value)?;
    }
    Ok(())
}

pub fn parse_metric_rows(text: &str) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 && line == METRICS_HEADER || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |m: &str| Error::Parse { line: n + 1, message: m.to_string() };
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        rows.push(MetricRow {
            method: f[0].to_string(),
            seed: f[1].parse().map_err(|_| bad("bad seed"))?,
            iteration: f[2].parse().map_err(|_| bad("bad iteration"))?,
            evals: f[3].parse().map_err(|_| bad("bad evals"))?,
            metric_name: f[4].to_string(),
            value: f[5].parse().map_err(|_| bad("bad value"))?,
        });
    }
    Ok(rows)
}
