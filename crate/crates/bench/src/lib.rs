//! Criterion benchmarks for `qcd-core`; see `benches/qcd.rs`.
