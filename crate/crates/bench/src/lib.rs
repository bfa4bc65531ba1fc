//! Benchmark harness for the solvers. See `benches/`.
