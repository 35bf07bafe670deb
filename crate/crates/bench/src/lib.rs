//! Criterion benchmarks for the autodiff kernels and the training loops.
//! Run with `cargo bench -p urbf-bench`.
