//! Criterion benchmarks for diffreg; see `benches/`.
