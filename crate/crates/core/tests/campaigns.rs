use std::sync::Arc;

use rand::Rng;

use batchscreen::engine::{
    run_campaign, CampaignConfig, Method, MetricSpec, PreparedSnapshot, SurrogateKind,
};
use batchscreen::harness::{SerialBackend, ThreadedBackend};
use batchscreen::pool::FeatureKind;
use batchscreen::rf::{rf_build_basis, LinearPosterior, RandomFeatureModel};
use batchscreen::seed::rng;
use batchscreen::{FeatureMatrix, Library, ObjectiveSense, PoolView, SqExpKernel};

fn random_library(seed: u64, n: usize, d: usize, sense: ObjectiveSense, negate: bool) -> Arc<Library> {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n * d).map(|_| r.random::<f64>()).collect();
    let mut t: Vec<f64> = x.chunks(d).map(|row| row.iter().map(|v| (3.0 * v).sin()).sum()).collect();
    if negate {
        t.iter_mut().for_each(|v| *v = -*v);
    }
    let ids = (0..n).map(|i| format!("c{i}")).collect();
    let feats = FeatureMatrix::new(n, d, x).unwrap();
    Arc::new(Library::new(ids, feats, t, sense, FeatureKind::Dense, true).unwrap())
}

/// Standard normal CDF by Simpson quadrature of the density from -10.
fn normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let (a, h) = (-10.0, (x + 10.0) / n as f64);
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(x) + inner) * h / 3.0
}

fn small_config(method: Method, surrogate: SurrogateKind, batch: usize, iterations: usize, seed: u64) -> CampaignConfig {
    let mut c = CampaignConfig::new(method, surrogate, batch, iterations, seed);
    c.rfgp.features = 100;
    c.pbp.hidden = vec![10];
    c.pbp.epochs = 3;
    c.fantasies = 3;
    c.metrics = MetricSpec { immediate_regret: true, recall_fraction: Some(0.05), recall_threshold: None };
    c
}

/// Two candidates whose scores are the two weights of a conjugate Gaussian
/// posterior, so the Thompson pick probability has a closed form.
fn two_arm_snapshot(y0: &[f64], y1: &[f64]) -> (PreparedSnapshot, PoolView, f64) {
    let noise = 0.5;
    let mut phi = Vec::new();
    let mut y = Vec::new();
    for &v in y0 {
        phi.extend([1.0, 0.0]);
        y.push(v);
    }
    for &v in y1 {
        phi.extend([0.0, 1.0]);
        y.push(v);
    }
    let posterior = LinearPosterior::fit(&phi, 2, &y, noise).unwrap();
    // Closed-form posterior per weight: precision 1 + k/noise.
    let moments = |ys: &[f64]| {
        let prec = 1.0 + ys.len() as f64 / noise;
        (ys.iter().sum::<f64>() / noise / prec, 1.0 / prec)
    };
    let (m0, v0) = moments(y0);
    let (m1, v1) = moments(y1);
    let p_first = normal_cdf((m0 - m1) / (v0 + v1).sqrt());

    let basis = rf_build_basis(SqExpKernel::new(1.0, 1.0, noise).unwrap(), 2, 1, 0).unwrap();
    let model = Arc::new(RandomFeatureModel { basis, posterior });
    let lib = Arc::new(
        Library::new(
            vec!["a".into(), "b".into()],
            FeatureMatrix::new(2, 1, vec![0.0, 1.0]).unwrap(),
            vec![0.0, 0.0],
            ObjectiveSense::Maximize,
            FeatureKind::Dense,
            false,
        )
        .unwrap(),
    );
    let snap = PreparedSnapshot::with_features(model, Arc::new(vec![1.0, 0.0, 0.0, 1.0]));
    (snap, PoolView::new(lib, vec![false, false]).unwrap(), p_first)
}

#[test]
fn thompson_pick_frequency_matches_conjugate_posterior() {
    let (snap, view, p) = two_arm_snapshot(&[1.0, 1.2, 0.9], &[0.3, 0.1]);
    let draws = 4000;
    let firsts = (0..draws).filter(|&s| snap.ranked_list(&view, 1, s as u64).unwrap().indices[0] == 0).count();
    let freq = firsts as f64 / draws as f64;
    let sd = (p * (1.0 - p) / draws as f64).sqrt();
    assert!((freq - p).abs() < 4.0 * sd, "freq {freq} vs {p}");

    let (snap, view, p) = two_arm_snapshot(&[2.0; 6], &[0.0; 6]);
    assert!(p > 0.99);
    let firsts = (0..200).filter(|&s| snap.ranked_list(&view, 1, s).unwrap().indices[0] == 0).count();
    assert!(firsts >= 190, "{firsts}/200");
}

#[test]
fn minimising_negated_targets_gives_identical_batches() {
    for (method, surrogate) in
        [(Method::Pdts, SurrogateKind::Rfgp), (Method::Ei, SurrogateKind::Rfgp), (Method::Greedy, SurrogateKind::Pbp)]
    {
        let up = random_library(4, 60, 2, ObjectiveSense::Maximize, false);
        let down = random_library(4, 60, 2, ObjectiveSense::Minimize, true);
        let a = run_campaign(small_config(method, surrogate, 4, 4, 9), up, &mut SerialBackend).unwrap();
        let b = run_campaign(small_config(method, surrogate, 4, 4, 9), down, &mut SerialBackend).unwrap();
        assert_eq!(a.batches, b.batches, "{method}");
        let ra: Vec<_> = a.records.iter().map(|r| (r.ir, r.recall)).collect();
        let rb: Vec<_> = b.records.iter().map(|r| (r.ir, r.recall)).collect();
        assert_eq!(ra, rb, "{method}");
    }
}

#[test]
fn campaigns_are_reproducible_across_backends() {
    let lib = random_library(5, 80, 3, ObjectiveSense::Maximize, false);
    for method in [Method::Pdts, Method::Ts, Method::ParallelEi, Method::EpsGreedy(0.2), Method::Random] {
        let config = small_config(method, SurrogateKind::Rfgp, 5, 3, 11);
        let a = run_campaign(config.clone(), Arc::clone(&lib), &mut SerialBackend).unwrap();
        let b = run_campaign(config.clone(), Arc::clone(&lib), &mut SerialBackend).unwrap();
        let mut threaded = ThreadedBackend::new(2).unwrap();
        let c = run_campaign(config, Arc::clone(&lib), &mut threaded).unwrap();
        assert_eq!(a.to_jsonl(false), b.to_jsonl(false), "{method}");
        assert_eq!(a.to_jsonl(false), c.to_jsonl(false), "{method}");
    }
    let a = run_campaign(small_config(Method::Pdts, SurrogateKind::Rfgp, 5, 3, 11), Arc::clone(&lib), &mut SerialBackend);
    let b = run_campaign(small_config(Method::Pdts, SurrogateKind::Rfgp, 5, 3, 12), lib, &mut SerialBackend);
    assert_ne!(a.unwrap().batches, b.unwrap().batches);
}

#[test]
fn exhausting_the_pool_ends_with_a_short_batch() {
    let lib = random_library(6, 23, 2, ObjectiveSense::Minimize, false);
    for method in [Method::Pdts, Method::Ts, Method::Greedy, Method::Random] {
        let trace = run_campaign(small_config(method, SurrogateKind::Rfgp, 5, 10, 3), Arc::clone(&lib), &mut SerialBackend)
            .unwrap();
        let sizes: Vec<usize> = trace.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 5, 3], "{method}");
        let mut all: Vec<usize> = trace.evaluated().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(trace.records.last().unwrap().ir, Some(0.0));
        assert_eq!(trace.records.last().unwrap().recall, Some(1.0));
    }
}
