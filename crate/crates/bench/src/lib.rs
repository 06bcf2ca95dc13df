//! Benchmarks for `icsr-core` live under `benches/`.
