//! Criterion benchmarks for the batchscreen hot paths; see `benches/`.
