//! Criterion benchmarks for the runtime and concept operations; see `benches/`.
