use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where each final batch entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub worker: usize,
    /// Zero-based position in that worker's ranked list.
    pub rank: usize,
}

/// Result of one PDTS proposal round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchProposal {
    pub t: usize,
    pub lists: Vec<Vec<usize>>,
    pub batch: Vec<usize>,
    pub provenance: Vec<Provenance>,
    /// Fewer candidates remained than the batch size.
    pub short: bool,
}

/// One line of the JSONL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub proposed: Vec<String>,
    /// Revealed raw targets in the library's native sense.
    pub revealed: Vec<f64>,
    /// Best raw target observed so far.
    pub incumbent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ir: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_recall: Option<f64>,
    /// Cumulative evaluations after this iteration.
    pub evals: usize,
    #[serde(default)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CampaignTrace {
    pub method: String,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// Candidate indices per iteration, in evaluation order.
    pub batches: Vec<Vec<usize>>,
    /// PDTS proposal details (kept in memory only).
    pub proposals: Vec<BatchProposal>,
}

impl CampaignTrace {
    pub fn new(method: String, seed: u64) -> Self {
        Self { method, seed, ..Default::default() }
    }

    pub fn evaluated(&self) -> impl Iterator<Item = usize> + '_ {
        self.batches.iter().flatten().copied()
    }

    pub fn write_jsonl<W: Write>(&self, out: &mut W, timing: bool) -> Result<()> {
        for r in &self.records {
            if timing {
                serde_json::to_writer(&mut *out, r)?;
            } else {
                let mut v = serde_json::to_value(r)?;
                if let Some(o) = v.as_object_mut() {
                    o.remove("wall_ms");
                }
                serde_json::to_writer(&mut *out, &v)?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self, timing: bool) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf, timing).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<IterationRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_timing_strip() {
        let mut trace = CampaignTrace::new("ts".into(), 1);
        trace.records.push(IterationRecord {
            t: 0,
            proposed: vec!["a".into()],
            revealed: vec![0.1 + 0.2],
            incumbent: 0.30000000000000004,
            ir: Some(1e-300),
            recall: None,
            threshold_recall: None,
            evals: 1,
            wall_ms: 12.5,
        });
        let text = trace.to_jsonl(true);
        let back = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, trace.records);
        let stripped = trace.to_jsonl(false);
        assert!(!stripped.contains("wall_ms"));
        assert!(!stripped.contains("recall"));
    }
}
