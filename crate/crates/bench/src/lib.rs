//! Criterion benchmarks for the embedding pipeline; see `benches/pipeline.rs`.
