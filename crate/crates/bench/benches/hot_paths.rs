use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use batchscreen::engine::{dedup_merge, PosteriorSnapshot, PreparedSnapshot};
use batchscreen::harness::wire::{EvalResultPayload, RankedListPayload};
use batchscreen::harness::{read_frame, write_frame, MessageKind, WireMessage};
use batchscreen::pbp::{pbp_adf_update, pbp_init, BnnArchitecture};
use batchscreen::rf::{rf_build_basis, RandomFeatureModel};
use batchscreen::synth::{generate_synthetic_library, SynthStructure};
use batchscreen::{PoolPredictor, PoolView, SqExpKernel};

fn pbp_update(c: &mut Criterion) {
    let lib = generate_synthetic_library(1, 500, 32, SynthStructure::GpScored).unwrap();
    let q0 = pbp_init(&BnnArchitecture::new(32, vec![50]), 0).unwrap();
    let x = lib.features().row(0).to_vec();
    c.bench_function("pbp_adf_update_32x50", |b| {
        b.iter_batched(|| q0.clone(), |mut q| pbp_adf_update(&mut q, &x, 0.3).unwrap(), BatchSize::SmallInput)
    });
}

fn rf_sample_and_score(c: &mut Criterion) {
    let lib = generate_synthetic_library(2, 20_000, 32, SynthStructure::GpScored).unwrap();
    let kernel = SqExpKernel::new(3.0, 1.0, 1e-3).unwrap();
    let basis = rf_build_basis(kernel, 500, 32, 0).unwrap();
    let train: Vec<&[f64]> = (0..200).map(|i| lib.features().row(i)).collect();
    let y: Vec<f64> = (0..200).map(|i| lib.targets()[i]).collect();
    let model = RandomFeatureModel::fit_inputs(basis, &train, &y).unwrap();
    let snap = PreparedSnapshot::new(PosteriorSnapshot::RandomFeatures(Arc::new(model)), &lib, None);
    let view = PoolView::new(Arc::new(lib), vec![false; 20_000]).unwrap();
    let mut seed = 0;
    c.bench_function("rf_thompson_list_20000x500", |b| {
        b.iter(|| {
            seed += 1;
            snap.ranked_list(&view, 200, seed).unwrap()
        })
    });
}

fn gp_push(c: &mut Criterion) {
    let lib = Arc::new(generate_synthetic_library(3, 2000, 8, SynthStructure::GpScored).unwrap());
    let kernel = SqExpKernel::new(2.0, 1.0, 1e-2).unwrap();
    let base = PoolPredictor::build(Arc::clone(&lib), kernel, &(0..100).collect::<Vec<_>>()).unwrap();
    c.bench_function("gp_pool_push_2000_at_100", |b| {
        b.iter_batched(|| base.clone(), |mut p| p.push(500).unwrap(), BatchSize::LargeInput)
    });
}

fn merge(c: &mut Criterion) {
    let lib = Arc::new(generate_synthetic_library(4, 5000, 4, SynthStructure::GpScored).unwrap());
    let view = PoolView::new(lib, vec![false; 5000]).unwrap();
    // 200 workers whose lists overlap heavily.
    let lists: Vec<Vec<usize>> = (0..200).map(|w| (0..200).map(|k| (w * 7 + k * 13) % 1000).collect()).collect();
    c.bench_function("dedup_merge_200x200", |b| b.iter(|| dedup_merge(&lists, &view).unwrap()));
}

fn frames(c: &mut Criterion) {
    let list = RankedListPayload { indices: (0..200).collect(), short: false };
    let msg = WireMessage::new(MessageKind::RankedList, 3, 7, &list).unwrap();
    c.bench_function("frame_encode_ranked_list_200", |b| {
        b.iter(|| {
            let mut buf = Vec::with_capacity(2048);
            write_frame(&mut buf, &msg).unwrap();
            buf
        })
    });
    let result = WireMessage::new(MessageKind::EvalResult, 3, 7, &EvalResultPayload { index: 4, value: 0.1 }).unwrap();
    let mut buf = Vec::new();
    write_frame(&mut buf, &result).unwrap();
    c.bench_function("frame_decode_eval_result", |b| b.iter(|| read_frame(&mut buf.as_slice()).unwrap()));
}

criterion_group!(benches, pbp_update, rf_sample_and_score, gp_push, merge, frames);
criterion_main!(benches);
