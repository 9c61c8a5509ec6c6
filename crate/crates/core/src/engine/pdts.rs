//! Parallel Thompson proposal: independent ranked lists merged into one batch.

use crate::error::{Error, Result};
use crate::harness::{ProposalBackend, ProposeRequest};
use crate::pool::PoolView;
use crate::seed::worker_seed;

use super::snapshot::PreparedSnapshot;
use super::trace::{BatchProposal, Provenance};

/// Merges worker ranked lists in worker order: each worker contributes its
/// highest-ranked entry not already taken.
///
/// Lists may be shorter than the worker count when the pool is nearly
/// exhausted; a worker with nothing left to offer is skipped.
pub fn dedup_merge(lists: &[Vec<usize>], view: &PoolView) -> Result<(Vec<usize>, Vec<Provenance>)> {
    let n = view.len();
    let mut taken = vec![false; n];
    let mut seen = vec![usize::MAX; n];
    let mut batch = Vec::with_capacity(lists.len());
    let mut provenance = Vec::with_capacity(lists.len());
    for (s, list) in lists.iter().enumerate() {
        for &i in list {
            if i >= n {
                return Err(Error::ProtocolViolation(format!("worker {s} proposed candidate {i} outside the pool")));
            }
            if view.is_evaluated(i) {
                return Err(Error::ProtocolViolation(format!("worker {s} proposed evaluated candidate {i}")));
            }
            if seen[i] == s {
                return Err(Error::ProtocolViolation(format!("worker {s} listed candidate {i} twice")));
            }
            seen[i] = s;
        }
        if let Some((rank, &i)) = list.iter().enumerate().find(|(_, &i)| !taken[i]) {
            taken[i] = true;
            batch.push(i);
            provenance.push(Provenance { worker: s, rank });
        }
    }
    Ok((batch, provenance))
}

/// One PDTS round at iteration `t`: `batch_size` workers each draw a
/// function from `snapshot` and rank the pool; the lists are merged.
pub fn pdts_propose(
    backend: &mut dyn ProposalBackend,
    snapshot: &PreparedSnapshot,
    view: &PoolView,
    batch_size: usize,
    master: u64,
    t: usize,
) -> Result<BatchProposal> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    if view.remaining() == 0 {
        return Err(Error::PoolExhausted);
    }
    let seeds: Vec<u64> = (0..batch_size as u64).map(|s| worker_seed(master, t as u64, s)).collect();
    let req = ProposeRequest { t, snapshot, view, batch_size, seeds: &seeds };
    let ranked = backend.propose(&req)?;
    if ranked.len() != batch_size {
        return Err(Error::ProtocolViolation(format!("expected {batch_size} ranked lists, got {}", ranked.len())));
    }
    let want = batch_size.min(view.remaining());
    for (s, r) in ranked.iter().enumerate() {
        if r.indices.len() != want {
            return Err(Error::ProtocolViolation(format!(
                "worker {s} returned {} entries, expected {want}",
                r.indices.len()
            )));
        }
    }
    let lists: Vec<Vec<usize>> = ranked.into_iter().map(|r| r.indices).collect();
    let (batch, provenance) = dedup_merge(&lists, view)?;
    Ok(BatchProposal { t, short: batch.len() < batch_size, lists, batch, provenance })
}
