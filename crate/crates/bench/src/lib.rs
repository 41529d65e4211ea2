//! Criterion benchmarks for the KDM inner loop live in `benches/`.
