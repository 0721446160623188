//! Benchmark stage: sample sizing, the expert oracle, per-model metrics and ranked comparison.

mod compare;
mod metrics;
mod oracle;
mod sample_size;
mod suite;

pub use compare::{compare_models, ComparisonReport, RankedModel, Weights};
pub use metrics::{compute_metrics, evaluate_model, Interpretability, ModelRunMetrics, TaskMetrics, UNPARSED};
pub use oracle::{load_oracle_csv, oracle_digest, write_oracle_csv, OracleEntry};
pub use sample_size::{required_sample_size, ConfidenceLevel};
pub use suite::{build_benchmark_suite, BenchmarkSuite, SuiteComposition};
