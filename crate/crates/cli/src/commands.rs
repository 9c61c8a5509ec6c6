use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use batchscreen::engine::{run_campaign, CampaignError, Method};
use batchscreen::experiments::{
    metric_rows, median_final_ir, repetition_seed, summarize, summary_csv, summary_text, EpsTable1, GpFigure3,
    RunRecord, ScreeningFigure4,
};
use batchscreen::harness::{BackendKind, ProposalBackend};
use batchscreen::metrics::{log10_regret, MetricRow};
use batchscreen::objectives::{gp_prior_library, grid_library, hartmann6_library, ObjectiveName};
use batchscreen::pool::Library;
use batchscreen::seed::{stream_seed, Stream};

use crate::output::{trace_name, OutputDir};
use crate::spec::{ExperimentSpec, ObjectiveSpec};
use crate::{thread_cap, Failure, Suite};

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn objective_library(o: &ObjectiveSpec, seed: u64, rep: usize) -> batchscreen::Result<Library> {
    match o.name {
        ObjectiveName::Bohachevsky | ObjectiveName::Branin => grid_library(o.name, o.resolution.unwrap_or(200)),
        ObjectiveName::Hartmann6 => hartmann6_library(o.points.unwrap_or(50_000)),
        ObjectiveName::GpPrior => {
            gp_prior_library(stream_seed(seed, Stream::Library, &[rep as u64]), o.resolution.unwrap_or(100))
        }
    }
}

struct Job {
    method: Method,
    rep: usize,
    library: Arc<Library>,
}

type JobResult = Result<RunRecord, (Method, usize, CampaignError)>;

fn run_job(spec: &ExperimentSpec, job: Job, backend: &mut dyn ProposalBackend) -> JobResult {
    let config = spec.campaign_config(job.method, repetition_seed(spec.seed, job.rep));
    log::info!("running {} rep {}", job.method, job.rep);
    match run_campaign(config, job.library, backend) {
        Ok(trace) => Ok(RunRecord { group: String::new(), method: job.method, rep: job.rep, trace }),
        Err(e) => Err((job.method, job.rep, e)),
    }
}

/// `run <spec>`.
pub fn run(spec_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let bytes = fs::read(spec_path).map_err(|e| invalid(anyhow!("spec: cannot read {}: {e}", spec_path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| invalid(anyhow!("spec: not UTF-8: {e}")))?;
    let mut spec = ExperimentSpec::parse(text).map_err(|e| invalid(e.context("spec")))?;
    let base = spec_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    spec.resolve_paths(base);
    spec.validate().map_err(invalid)?;

    let stem = spec_path.file_stem().and_then(|s| s.to_str()).unwrap_or("spec");
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| base.join(format!("{stem}-output")));

    let mut jobs = Vec::new();
    let mut shared: Option<Arc<Library>> = None;
    for rep in 0..spec.repetitions {
        let library = match (&spec.library, &spec.objective) {
            (Some(source), _) => match &shared {
                Some(lib) => Arc::clone(lib),
                None => {
                    let lib = source
                        .load(stream_seed(spec.seed, Stream::Library, &[]))
                        .map_err(|e| invalid(anyhow!("library: {e}")))?;
                    Arc::clone(shared.insert(Arc::new(lib)))
                }
            },
            (None, Some(o)) if o.name == ObjectiveName::GpPrior || shared.is_none() => {
                let lib = Arc::new(objective_library(o, spec.seed, rep).map_err(|e| invalid(anyhow!("objective: {e}")))?);
                if o.name != ObjectiveName::GpPrior {
                    shared = Some(Arc::clone(&lib));
                }
                lib
            }
            (None, Some(_)) => Arc::clone(shared.as_ref().expect("shared objective pool")),
            (None, None) => unreachable!("validated"),
        };
        for &method in &spec.methods {
            jobs.push(Job { method, rep, library: Arc::clone(&library) });
        }
    }

    let mut outdir = OutputDir::create(&out_dir)?;
    let results: Vec<JobResult> = match &spec.backend {
        BackendKind::Socket { .. } => {
            let mut backend = spec.backend.build().map_err(|e| anyhow!("backend: {e}"))?;
            let mut results = Vec::new();
            for job in jobs {
                let r = run_job(&spec, job, backend.as_mut());
                let failed = r.is_err();
                results.push(r);
                if failed {
                    break;
                }
            }
            if let Err(e) = backend.shutdown() {
                log::warn!("worker shutdown failed: {e}");
            }
            results
        }
        kind => {
            let mut kind = kind.clone();
            if let BackendKind::Threaded { threads } = &mut kind {
                *threads = (*threads).min(thread_cap()).max(1);
            }
            let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_cap()).build()?;
            pool.install(|| {
                jobs.into_par_iter()
                    .map(|job| {
                        let mut backend = kind.build().expect("in-process backends always build");
                        run_job(&spec, job, backend.as_mut())
                    })
                    .collect()
            })
        }
    };

    let mut rows: Vec<MetricRow> = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(run) => {
                outdir.write_trace(&trace_name(&run.method.to_string(), run.rep), &run.trace)?;
                rows.extend(metric_rows(&[&run]));
            }
            Err((method, rep, err)) => {
                outdir.write_trace(&trace_name(&method.to_string(), rep), &err.partial)?;
                let partial = RunRecord { group: String::new(), method, rep, trace: err.partial.clone() };
                rows.extend(metric_rows(&[&partial]));
                failure.get_or_insert(anyhow!("{method} repetition {rep}: {err}"));
            }
        }
    }
    outdir.write_metrics("metrics.csv", &rows)?;
    let status = if failure.is_some() { "aborted" } else { "ok" };
    outdir.finish("run", &bytes, spec.seed, status)?;
    match failure {
        Some(e) => Err(Failure::Runtime(e)),
        None => {
            println!("wrote {}", out_dir.display());
            Ok(())
        }
    }
}

fn load_suite<T: serde::de::DeserializeOwned + Default>(config: Option<&Path>) -> Result<T, Failure> {
    match config {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(anyhow!("config: cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| invalid(anyhow!("config: {e}")))
        }
    }
}

fn write_traces(outdir: &mut OutputDir, runs: &[RunRecord], by_group: bool) -> anyhow::Result<()> {
    for run in runs {
        let name = trace_name(&run.method.to_string(), run.rep);
        let rel = if by_group { format!("traces/{}/{name}", run.group) } else { format!("traces/{name}") };
        outdir.write_trace(&rel, &run.trace)?;
    }
    Ok(())
}

fn check_counts(repetitions: usize, iterations: usize) -> Result<(), Failure> {
    if repetitions == 0 || iterations == 0 {
        return Err(invalid(anyhow!("repetitions and iterations must be >= 1")));
    }
    Ok(())
}

/// `bench <suite>`.
pub fn bench(
    suite: Suite,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    repetitions: Option<usize>,
    iterations: Option<usize>,
) -> Result<(), Failure> {
    match suite {
        Suite::GpFigure3 => {
            let mut s: GpFigure3 = load_suite(config)?;
            s.seed = seed;
            s.repetitions = repetitions.unwrap_or(s.repetitions);
            s.iterations = iterations.unwrap_or(s.iterations);
            s.threads = thread_cap();
            check_counts(s.repetitions, s.iterations)?;
            let effective = toml::to_string(&s).context("serialising suite")?;
            let mut outdir = OutputDir::create(out)?;
            let runs = s.run()?;
            write_traces(&mut outdir, &runs, true)?;
            let mut table = String::from("objective,method,median_final_ir,mean_final_log10_ir\n");
            let mut text = format!("{:<12}  {:<12}  {:>16}  {:>19}\n", "objective", "method", "median_final_ir", "mean_final_log10_ir");
            for &o in &s.objectives {
                let group: Vec<&RunRecord> = runs.iter().filter(|r| r.group == o.to_string()).collect();
                outdir.write_metrics(&format!("{o}.csv"), &metric_rows(&group))?;
                for &m in &s.methods {
                    let med = median_final_ir(&runs, &o.to_string(), m)?;
                    let logs: Vec<f64> = group
                        .iter()
                        .filter(|r| r.method == m)
                        .filter_map(|r| r.trace.records.last().and_then(|x| x.ir))
                        .map(log10_regret)
                        .collect();
                    let mean_log = logs.iter().sum::<f64>() / logs.len().max(1) as f64;
                    table.push_str(&format!("{o},{m},{med},{mean_log}\n"));
                    text.push_str(&format!("{:<12}  {:<12}  {:>16.6e}  {:>19.3}\n", o.to_string(), m.to_string(), med, mean_log));
                }
            }
            outdir.write("summary.csv", table.as_bytes())?;
            outdir.write("summary.txt", text.as_bytes())?;
            outdir.finish("bench gp-figure3", effective.as_bytes(), seed, "ok")?;
            print!("{text}");
        }
        Suite::ScreeningFigure4 => {
            let mut s: ScreeningFigure4 = load_suite(config)?;
            s.seed = seed;
            s.repetitions = repetitions.unwrap_or(s.repetitions);
            s.iterations = iterations.unwrap_or(s.iterations);
            s.threads = thread_cap();
            check_counts(s.repetitions, s.iterations)?;
            let effective = toml::to_string(&s).context("serialising suite")?;
            let mut outdir = OutputDir::create(out)?;
            let runs = s.run()?;
            write_traces(&mut outdir, &runs, false)?;
            let rows = metric_rows(&runs.iter().collect::<Vec<_>>());
            outdir.write_metrics("recall.csv", &rows)?;
            let summary = summarize(&rows);
            outdir.write("summary.csv", summary_csv(&summary).as_bytes())?;
            let text = summary_text(&summary);
            outdir.write("summary.txt", text.as_bytes())?;
            outdir.finish("bench screening-figure4", effective.as_bytes(), seed, "ok")?;
            print!("{text}");
        }
        Suite::EpsTable1 => {
            let mut s: EpsTable1 = load_suite(config)?;
            s.seed = seed;
            s.repetitions = repetitions.unwrap_or(s.repetitions);
            s.iterations = iterations.unwrap_or(s.iterations);
            s.threads = thread_cap();
            check_counts(s.repetitions, s.iterations)?;
            let effective = toml::to_string(&s).context("serialising suite")?;
            let mut outdir = OutputDir::create(out)?;
            let runs = s.run()?;
            write_traces(&mut outdir, &runs, false)?;
            outdir.write_metrics("recall.csv", &metric_rows(&runs.iter().collect::<Vec<_>>()))?;
            let table = s.table(&runs)?;
            outdir.write("ranks.csv", table.to_csv().as_bytes())?;
            outdir.write("ranks.txt", table.to_text().as_bytes())?;
            outdir.finish("bench eps-table1", effective.as_bytes(), seed, "ok")?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn collect_traces(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_traces(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            out.push(path);
        }
    }
    Ok(())
}

/// `report <dir>`.
pub fn report(dir: &Path) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Err(invalid(anyhow!("{} is not a directory", dir.display())));
    }
    let mut paths = Vec::new();
    collect_traces(dir, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        return Err(invalid(anyhow!("no traces under {}", dir.display())));
    }
    let mut rows = Vec::new();
    for path in &paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let (method, rep) = match stem.rsplit_once("-rep") {
            Some((m, r)) => (m, r.parse().unwrap_or(0)),
            None => (stem, 0),
        };
        let rel = path.parent().and_then(|p| p.strip_prefix(dir).ok()).unwrap_or(Path::new(""));
        let group: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .filter(|c| c != "traces")
            .collect();
        let label = if group.is_empty() { method.to_string() } else { format!("{}/{method}", group.join("/")) };
        let file = fs::File::open(path)?;
        let records = batchscreen::engine::read_jsonl(std::io::BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))?;
        for r in records {
            let mut push = |name: &str, value: f64| {
                rows.push(MetricRow {
                    method: label.clone(),
                    seed: rep,
                    iteration: r.t,
                    evals: r.evals,
                    metric_name: name.into(),
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
    let summary = summarize(&rows);
    fs::write(dir.join("summary.csv"), summary_csv(&summary))?;
    let text = summary_text(&summary);
    fs::write(dir.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}
