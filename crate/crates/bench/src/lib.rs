//! Benchmarks for the classification pipeline live in `benches/`.
