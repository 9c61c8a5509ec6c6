//! Desk-scale experiment suites: regret curves on synthetic objectives,
//! recall curves on a synthetic screening library, and the epsilon-greedy
//! rank table.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_campaign, CampaignConfig, CampaignTrace, Method, PbpConfig, SurrogateKind};
use crate::error::{Error, Result};
use crate::gp::SqExpKernel;
use crate::harness::SerialBackend;
use crate::library::{load_library, LibraryFormat};
use crate::metrics::{average_rank, log10_regret, MetricRow, RankSummary};
use crate::objectives::{objective_library, ObjectiveName};
use crate::pool::{Library, ObjectiveSense};
use crate::seed::{stream_seed, Stream};
use crate::stats::{mean, median, std_error};
use crate::synth::{generate_synthetic_library, SynthStructure};

/// Seed of repetition `rep` under `master`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    stream_seed(master, Stream::Repetition, &[rep as u64])
}

/// Finished campaign within a suite.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Objective or library the campaign ran on.
    pub group: String,
    pub method: Method,
    pub rep: usize,
    pub trace: CampaignTrace,
}

struct Job {
    group: String,
    rep: usize,
    config: CampaignConfig,
    library: Arc<Library>,
}

fn run_jobs(jobs: Vec<Job>, threads: usize) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start thread pool: {e}")))?;
    pool.install(|| {
        jobs.into_par_iter()
            .map(|job| {
                let method = job.config.method;
                log::info!("{} {method} rep {}", job.group, job.rep);
                let trace = run_campaign(job.config, job.library, &mut SerialBackend).map_err(|e| e.error)?;
                Ok(RunRecord { group: job.group, method, rep: job.rep, trace })
            })
            .collect()
    })
}

/// Long-format metric rows for every recorded metric of `runs`.
pub fn metric_rows(runs: &[&RunRecord]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for run in runs {
        for r in &run.trace.records {
            let mut push = |name: &str, value: f64| {
                rows.push(MetricRow {
                    method: run.method.to_string(),
                    seed: run.trace.seed,
                    iteration: r.t,
                    evals: r.evals,
                    metric_name: name.to_string(),
                    value,
                })
            };
            if let Some(ir) = r.ir {
                push("ir", ir);
                push("log10_ir", log10_regret(ir));
            }
            if let Some(v) = r.recall {
                push("recall", v);
            }
            if let Some(v) = r.threshold_recall {
                push("threshold_recall", v);
            }
        }
    }
    rows
}

fn final_value(trace: &CampaignTrace, pick: impl Fn(&crate::engine::IterationRecord) -> Option<f64>) -> Result<f64> {
    trace
        .records
        .last()
        .and_then(pick)
        .ok_or_else(|| Error::UndefinedMetric(format!("{} trace has no final value", trace.method)))
}

/// Median final regret per method over the runs of one group.
pub fn median_final_ir(runs: &[RunRecord], group: &str, method: Method) -> Result<f64> {
    let finals = runs
        .iter()
        .filter(|r| r.group == group && r.method == method)
        .map(|r| final_value(&r.trace, |x| x.ir))
        .collect::<Result<Vec<f64>>>()?;
    if finals.is_empty() {
        return Err(Error::UndefinedMetric(format!("no {method} runs on {group}")));
    }
    Ok(median(&finals))
}

/// Mean recall at iteration `t` across repetitions.
pub fn mean_recall_at(runs: &[RunRecord], method: Method, t: usize) -> Result<f64> {
    let vals: Vec<f64> = runs
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.trace.records.get(t).and_then(|x| x.recall))
        .collect();
    if vals.is_empty() {
        return Err(Error::UndefinedMetric(format!("no {method} recall at iteration {t}")));
    }
    Ok(mean(&vals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpFigure3 {
    pub objectives: Vec<ObjectiveName>,
    pub methods: Vec<Method>,
    pub batch_size: usize,
    pub iterations: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub rf_features: usize,
    #[serde(skip)]
    pub threads: usize,
}

impl Default for GpFigure3 {
    fn default() -> Self {
        Self {
            objectives: ObjectiveName::ALL.to_vec(),
            methods: vec![Method::Ts, Method::Ei, Method::Pdts, Method::ParallelEi, Method::Random],
            batch_size: 10,
            iterations: 20,
            repetitions: 20,
            seed: 0,
            rf_features: 500,
            threads: 1,
        }
    }
}

impl GpFigure3 {
    pub fn config(&self, objective: ObjectiveName, method: Method, rep: usize) -> CampaignConfig {
        let mut c = CampaignConfig::new(
            method,
            SurrogateKind::Rfgp,
            self.batch_size,
            self.iterations,
            repetition_seed(self.seed, rep),
        );
        c.rfgp.features = self.rf_features;
        if objective == ObjectiveName::GpPrior {
            c.rfgp.kernel = Some(SqExpKernel { lengthscale: 0.1, signal_variance: 1.0, noise_variance: 1e-6 });
        }
        c.metrics.immediate_regret = true;
        c
    }

    pub fn run(&self) -> Result<Vec<RunRecord>> {
        let mut runs = Vec::new();
        for &objective in &self.objectives {
            let shared = match objective {
                ObjectiveName::GpPrior => None,
                _ => Some(Arc::new(objective_library(objective, self.seed)?)),
            };
            let mut jobs = Vec::new();
            for rep in 0..self.repetitions {
                let library = match &shared {
                    Some(lib) => Arc::clone(lib),
                    None => Arc::new(objective_library(
                        objective,
                        stream_seed(self.seed, Stream::Library, &[rep as u64]),
                    )?),
                };
                for &method in &self.methods {
                    jobs.push(Job {
                        group: objective.to_string(),
                        rep,
                        config: self.config(objective, method, rep),
                        library: Arc::clone(&library),
                    });
                }
            }
            runs.extend(run_jobs(jobs, self.threads)?);
        }
        Ok(runs)
    }
}

/// Where a screening suite gets its library from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum LibrarySource {
    Synthetic { n: usize, d: usize, structure: SynthStructure },
    File { path: PathBuf, format: LibraryFormat, #[serde(default)] sense: ObjectiveSense },
}

impl LibrarySource {
    pub fn load(&self, seed: u64) -> Result<Library> {
        match self {
            LibrarySource::Synthetic { n, d, structure } => generate_synthetic_library(seed, *n, *d, *structure),
            LibrarySource::File { path, format, sense } => load_library(path, *format, *sense),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningFigure4 {
    pub library: LibrarySource,
    pub methods: Vec<Method>,
    pub batch_size: usize,
    pub iterations: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub recall_fraction: f64,
    pub pbp: PbpConfig,
    #[serde(skip)]
    pub threads: usize,
}

impl Default for ScreeningFigure4 {
    fn default() -> Self {
        Self {
            library: LibrarySource::Synthetic { n: 20_000, d: 32, structure: SynthStructure::GpScored },
            methods: vec![Method::Pdts, Method::Greedy, Method::Random],
            batch_size: 200,
            iterations: 25,
            repetitions: 10,
            seed: 0,
            recall_fraction: 0.01,
            pbp: PbpConfig::default(),
            threads: 1,
        }
    }
}

impl ScreeningFigure4 {
    pub fn run(&self) -> Result<Vec<RunRecord>> {
        let library = Arc::new(self.library.load(stream_seed(self.seed, Stream::Library, &[]))?);
        let mut jobs = Vec::new();
        for rep in 0..self.repetitions {
            for &method in &self.methods {
                let mut c = CampaignConfig::new(
                    method,
                    SurrogateKind::Pbp,
                    self.batch_size,
                    self.iterations,
                    repetition_seed(self.seed, rep),
                );
                c.pbp = self.pbp.clone();
                c.metrics.recall_fraction = Some(self.recall_fraction);
                jobs.push(Job { group: "screening".into(), rep, config: c, library: Arc::clone(&library) });
            }
        }
        run_jobs(jobs, self.threads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsTable1 {
    pub n: usize,
    pub d: usize,
    pub structure: SynthStructure,
    pub epsilons: Vec<f64>,
    pub batch_size: usize,
    pub iterations: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub recall_fraction: f64,
    pub pbp: PbpConfig,
    #[serde(skip)]
    pub threads: usize,
}

impl Default for EpsTable1 {
    fn default() -> Self {
        Self {
            n: 4000,
            d: 32,
            structure: SynthStructure::GpScored,
            epsilons: vec![0.01, 0.025, 0.05, 0.075],
            batch_size: 50,
            iterations: 16,
            repetitions: 50,
            seed: 0,
            recall_fraction: 0.01,
            pbp: PbpConfig::default(),
            threads: 1,
        }
    }
}

/// Mean rank table: one row per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub ranks: Vec<RankSummary>,
}

impl RankTable {
    pub fn from_runs(runs: &[RunRecord], methods: &[Method], repetitions: usize) -> Result<Self> {
        let mut table = vec![vec![f64::NAN; methods.len()]; repetitions];
        for r in runs {
            let m = methods.iter().position(|&m| m == r.method).ok_or_else(|| {
                Error::InvalidConfig(format!("run for unexpected method {}", r.method))
            })?;
            table[r.rep][m] = final_value(&r.trace, |x| x.recall)?;
        }
        if table.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::UndefinedMetric("rank table has missing repetitions".into()));
        }
        Ok(Self { methods: methods.iter().map(Method::to_string).collect(), ranks: average_rank(&table)? })
    }

    pub fn rank_of(&self, method: &str) -> Option<RankSummary> {
        self.methods.iter().position(|m| m == method).map(|i| self.ranks[i])
    }

    pub fn to_text(&self) -> String {
        let w = self.methods.iter().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{:<w$}  {:>9}  {:>6}\n", "method", "mean_rank", "se");
        for (m, r) in self.methods.iter().zip(&self.ranks) {
            let _ = writeln!(out, "{m:<w$}  {:>9.2}  {:>6.2}", r.mean, r.se);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_rank,se\n");
        for (m, r) in self.methods.iter().zip(&self.ranks) {
            let _ = writeln!(out, "{m},{},{}", r.mean, r.se);
        }
        out
    }
}

impl EpsTable1 {
    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.epsilons.iter().map(|&e| Method::EpsGreedy(e)).collect();
        m.push(Method::Pdts);
        m
    }

    pub fn run(&self) -> Result<Vec<RunRecord>> {
        let mut jobs = Vec::new();
        for rep in 0..self.repetitions {
            let library = Arc::new(generate_synthetic_library(
                stream_seed(self.seed, Stream::Library, &[rep as u64]),
                self.n,
                self.d,
                self.structure,
            )?);
            for method in self.methods() {
                let mut c = CampaignConfig::new(
                    method,
                    SurrogateKind::Pbp,
                    self.batch_size,
                    self.iterations,
                    repetition_seed(self.seed, rep),
                );
                c.pbp = self.pbp.clone();
                c.metrics.recall_fraction = Some(self.recall_fraction);
                jobs.push(Job { group: "eps-table".into(), rep, config: c, library: Arc::clone(&library) });
            }
        }
        run_jobs(jobs, self.threads)
    }

    pub fn table(&self, runs: &[RunRecord]) -> Result<RankTable> {
        RankTable::from_runs(runs, &self.methods(), self.repetitions)
    }
}

/// Per-iteration mean and standard error of one metric over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub iteration: usize,
    pub evals: usize,
    pub metric_name: String,
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Aggregates long-format rows by (method, metric, iteration).
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, usize), (usize, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = groups.entry((r.method.clone(), r.metric_name.clone(), r.iteration)).or_insert((r.evals, Vec::new()));
        e.0 = e.0.max(r.evals);
        e.1.push(r.value);
    }
    groups
        .into_iter()
        .map(|((method, metric_name, iteration), (evals, vals))| SummaryRow {
            method,
            iteration,
            evals,
            metric_name,
            mean: mean(&vals),
            se: std_error(&vals),
            count: vals.len(),
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "method,metric_name,iteration,evals,mean,se,count";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.method, r.metric_name, r.iteration, r.evals, r.mean, r.se, r.count);
    }
    out
}

/// Aligned text table of the final iteration of each (method, metric).
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut last: Vec<&SummaryRow> = Vec::new();
    for r in rows {
        match last.last_mut() {
            Some(prev) if prev.method == r.method && prev.metric_name == r.metric_name => *prev = r,
            _ => last.push(r),
        }
    }
    let mw = last.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let nw = last.iter().map(|r| r.metric_name.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<mw$}  {:<nw$}  {:>9}  {:>6}  {:>12}  {:>10}\n", "method", "metric", "iteration", "evals", "mean", "se");
    for r in last {
        let _ = writeln!(
            out,
            "{:<mw$}  {:<nw$}  {:>9}  {:>6}  {:>12.6}  {:>10.6}",
            r.method, r.metric_name, r.iteration, r.evals, r.mean, r.se
        );
    }
    out
}
