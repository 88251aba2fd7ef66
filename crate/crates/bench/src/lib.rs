//! Criterion benchmark harness support crate; see `benches/solver.rs`.
