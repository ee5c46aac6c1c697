//! Benchmarks for the policy network, the surrogate environment and the
//! advantage estimator. Run with `cargo bench -p xembody-bench`.
