//! Criterion benchmarks for the engine and the partitioners live in `benches/`.
