//! Criterion benchmarks for `proxybounds-core`; see `benches/`.
