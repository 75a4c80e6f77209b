//! Quantitative evaluation: response-prediction metrics (ATE correlation,
//! coefficient of determination, Jaccard top-k) and graph statistics (mean
//! Wasserstein distance of edges, false omission rate) with their
//! statistical primitives.

mod metrics;
mod stats;

use thiserror::Error;

use crate::inference::InferenceError;

pub use metrics::{
    false_omission_rate, mean_wd, response_metrics, EdgeWd, ForReport, GrnMetricsSection,
    MeanWdReport, MetricsReport, Provenance, TreatmentMetrics,
};
pub use stats::{
    ate_pearson, ate_r2, jaccard_topk, mann_whitney_exact_p, mann_whitney_normal_p,
    mann_whitney_p, mann_whitney_u, wasserstein_1d,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty sample")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

pub type EvalResult<T> = Result<T, EvalError>;
