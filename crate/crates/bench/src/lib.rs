//! Criterion benchmarks for the `smartkge` kernels live in `benches/`.
