//! The campaign loop: refit, propose, reveal, record.

use std::sync::Arc;
use std::time::Instant;

use crate::acquisition::{epsilon_greedy_batch, greedy_rank, random_batch, ts_argmax};
use crate::error::{Error, Result};
use crate::harness::ProposalBackend;
use crate::metrics::{immediate_regret, threshold_set, top_fraction_set, RecallTracker};
use crate::pool::{CandidatePool, Library, ObservationSet, PoolView};
use crate::seed::{stream_seed, worker_seed, Stream};

use super::config::{CampaignConfig, Method};
use super::model::ModelState;
use super::parallel_ei::parallel_ei_propose;
use super::pdts::pdts_propose;
use super::trace::{CampaignTrace, IterationRecord};

/// A failed campaign together with every iteration completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("campaign aborted after {} iterations: {error}", partial.records.len())]
pub struct CampaignError {
    pub error: Error,
    pub partial: CampaignTrace,
}

/// One Thompson step: draw a function from the posterior on `obs` and take
/// its argmax over the unevaluated pool. Step `k` uses the same seed as
/// worker 0 of a batch round at iteration `k`.
pub fn sequential_ts_step(
    model: &mut ModelState,
    obs: &ObservationSet,
    view: &PoolView,
    master: u64,
    k: usize,
) -> Result<usize> {
    if view.remaining() == 0 {
        return Err(Error::PoolExhausted);
    }
    if obs.is_empty() {
        return Ok(random_batch(view, 1, stream_seed(master, Stream::Random, &[k as u64]))?[0]);
    }
    model.refit(obs)?;
    let snapshot = model.thompson_snapshot(obs)?;
    let scores = snapshot.sample_scores(worker_seed(master, k as u64, 0))?;
    ts_argmax(&scores, view, &[])
}

pub struct Campaign {
    config: CampaignConfig,
    library: Arc<Library>,
    pool: CandidatePool,
    obs: ObservationSet,
    model: ModelState,
    trace: CampaignTrace,
    recall: Option<RecallTracker>,
    threshold: Option<RecallTracker>,
    best: Option<f64>,
    t: usize,
    step: usize,
}

impl Campaign {
    pub fn new(config: CampaignConfig, library: Arc<Library>) -> Result<Self> {
        config.validate()?;
        let n = library.len();
        let recall = match config.metrics.recall_fraction {
            Some(f) => Some(RecallTracker::new(&top_fraction_set(library.targets(), library.sense(), f)?, n)?),
            None => None,
        };
        let threshold = match config.metrics.recall_threshold {
            Some(th) => {
                let set = threshold_set(library.targets(), library.sense(), th);
                if set.is_empty() {
                    return Err(Error::UndefinedMetric(format!("no candidate beats threshold {th}")));
                }
                Some(RecallTracker::new(&set, n)?)
            }
            None => None,
        };
        let model = ModelState::new(&config, Arc::clone(&library));
        let trace = CampaignTrace::new(config.method.to_string(), config.seed);
        Ok(Self {
            pool: CandidatePool::new(Arc::clone(&library)),
            obs: ObservationSet::new(),
            model,
            trace,
            recall,
            threshold,
            best: None,
            t: 0,
            step: 0,
            config,
            library,
        })
    }

    pub fn trace(&self) -> &CampaignTrace {
        &self.trace
    }

    pub fn into_trace(self) -> CampaignTrace {
        self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.config.iterations || self.pool.remaining() == 0
    }

    /// Runs one iteration: propose a batch, evaluate it, record metrics.
    pub fn run_iteration(&mut self, backend: &mut dyn ProposalBackend) -> Result<()> {
        if self.pool.remaining() == 0 {
            return Err(Error::PoolExhausted);
        }
        let start = Instant::now();
        let t = self.t;
        let (batch, revealed) = if self.config.method.is_sequential() {
            self.sequential_iteration(backend)?
        } else {
            let (batch, workers) = self.propose_batch(backend)?;
            let revealed = self.evaluate(backend, &batch, &workers)?;
            (batch, revealed)
        };
        self.record(t, batch, revealed, start);
        self.t += 1;
        Ok(())
    }

    fn sequential_iteration(&mut self, backend: &mut dyn ProposalBackend) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut batch = Vec::new();
        let mut revealed = Vec::new();
        for _ in 0..self.config.batch_size {
            if self.pool.remaining() == 0 {
                break;
            }
            let view = self.pool.view();
            let k = self.step;
            let index = match self.config.method {
                Method::Ts => sequential_ts_step(&mut self.model, &self.obs, &view, self.config.seed, k)?,
                Method::Ei if self.obs.is_empty() => {
                    random_batch(&view, 1, stream_seed(self.config.seed, Stream::Random, &[k as u64]))?[0]
                }
                Method::Ei => {
                    self.model.refit(&self.obs)?;
                    let scores = self.model.ei_scores(&self.obs, &view)?;
                    ts_argmax(&scores, &view, &[])?
                }
                other => unreachable!("{other} is not sequential"),
            };
            let raw = self.evaluate(backend, &[index], &[0])?;
            batch.push(index);
            revealed.extend(raw);
            self.step += 1;
        }
        Ok((batch, revealed))
    }

    fn propose_batch(&mut self, backend: &mut dyn ProposalBackend) -> Result<(Vec<usize>, Vec<usize>)> {
        let s = self.config.batch_size;
        let t = self.t;
        let master = self.config.seed;
        let view = self.pool.view();
        let random_seed = stream_seed(master, Stream::Random, &[t as u64]);
        let positions = |b: &[usize]| (0..b.len()).collect::<Vec<_>>();
        if self.config.method == Method::Random || self.obs.is_empty() {
            let batch = random_batch(&view, s, random_seed)?;
            let workers = positions(&batch);
            return Ok((batch, workers));
        }
        self.model.refit(&self.obs)?;
        let batch = match self.config.method {
            Method::Pdts => {
                let snapshot = self.model.thompson_snapshot(&self.obs)?;
                let proposal = pdts_propose(backend, &snapshot, &view, s, master, t)?;
                let workers = proposal.provenance.iter().map(|p| p.worker).collect();
                let batch = proposal.batch.clone();
                self.trace.proposals.push(proposal);
                return Ok((batch, workers));
            }
            Method::Greedy => {
                let means = self.model.means(&self.obs, &view)?;
                greedy_rank(&means, &view, s)?.indices
            }
            Method::EpsGreedy(eps) => {
                let means = self.model.means(&self.obs, &view)?;
                epsilon_greedy_batch(&means, &view, s, eps, random_seed)?
            }
            Method::ParallelEi => {
                let ModelState::Rfgp(state) = &mut self.model else {
                    return Err(Error::InvalidConfig("parallel-ei needs the rfgp surrogate".into()));
                };
                let y = self.obs.targets();
                let predictor = state.predictor(&self.obs)?;
                let seed = stream_seed(master, Stream::Fantasy, &[t as u64]);
                parallel_ei_propose(predictor, &y, &view, s, self.config.fantasies, self.config.fantasy_strategy, seed)?
                    .into_iter()
                    .map(|p| p.index)
                    .collect()
            }
            Method::Random | Method::Ts | Method::Ei => unreachable!("handled elsewhere"),
        };
        let workers = positions(&batch);
        Ok((batch, workers))
    }

    fn evaluate(&mut self, backend: &mut dyn ProposalBackend, batch: &[usize], workers: &[usize]) -> Result<Vec<f64>> {
        for &i in batch {
            self.pool.mark_pending(i)?;
        }
        let jobs: Vec<(usize, usize)> = workers.iter().copied().zip(batch.iter().copied()).collect();
        let values = backend.evaluate(self.t, &jobs, &self.library)?;
        for (&i, &raw) in batch.iter().zip(&values) {
            let r = self.pool.reveal_external(i, raw)?;
            self.obs.push(i, r.engine)?;
            if self.best.is_none_or(|b| self.library.sense().better(raw, b)) {
                self.best = Some(raw);
            }
            if let Some(tr) = &mut self.recall {
                tr.observe(i);
            }
            if let Some(tr) = &mut self.threshold {
                tr.observe(i);
            }
        }
        Ok(values)
    }

    fn record(&mut self, t: usize, batch: Vec<usize>, revealed: Vec<f64>, start: Instant) {
        let lib = &self.library;
        let best = self.best.expect("at least one evaluation recorded");
        let sign = lib.sense().sign();
        let ir = self.config.metrics.immediate_regret.then(|| immediate_regret(-sign * best, -sign * lib.optimum()));
        self.trace.records.push(IterationRecord {
            t,
            proposed: batch.iter().map(|&i| lib.id(i).to_string()).collect(),
            revealed,
            incumbent: best,
            ir,
            recall: self.recall.as_ref().map(RecallTracker::recall),
            threshold_recall: self.threshold.as_ref().map(RecallTracker::recall),
            evals: self.pool.evaluated().len(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        self.trace.batches.push(batch);
    }
}

/// Runs `config.iterations` iterations, or until the pool is exhausted.
pub fn run_campaign(
    config: CampaignConfig,
    library: Arc<Library>,
    backend: &mut dyn ProposalBackend,
) -> std::result::Result<CampaignTrace, CampaignError> {
    let mut campaign = match Campaign::new(config.clone(), library) {
        Ok(c) => c,
        Err(error) => {
            return Err(CampaignError { error, partial: CampaignTrace::new(config.method.to_string(), config.seed) })
        }
    };
    backend.reset();
    while !campaign.is_finished() {
        if let Err(error) = campaign.run_iteration(backend) {
            return Err(CampaignError { error, partial: campaign.into_trace() });
        }
    }
    Ok(campaign.into_trace())
}
