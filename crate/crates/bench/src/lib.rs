//! Criterion benchmarks for dss-core live in `benches/`.
