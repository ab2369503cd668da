//! Quantitative evaluation: an oracle classifier trained on real data and the
//! metrics computed from its outputs.

mod generators;
mod metrics;
mod oracle;
mod protocol;
mod report;

pub use generators::{ConditionalGenerator, EncoderGenerator, PriorGenerator};
pub use metrics::{
    amp, amp_from_probs, attribute_accuracy, cluster_divergence, cumulative_interference, frechet_distance,
    frechet_feature_distance, top1_accuracy, AmpResult, AttributeAccuracy, ClusterDivergence, FrechetResult,
    ManipulationRun, SHRINKAGE,
};
pub use oracle::{AttributeOracle, OracleClassifier, OracleConfig, OraclePrediction, OracleValidation};
pub use protocol::{
    code_effect, condition_grid, conditional_manipulation, default_edits, generator_metrics, neutral_rows, CodeEffect,
    ImageStatistic, SweepConfig,
};
pub use report::{MetricKind, MetricReport};
