//! Objective and subjective metrics of human(-AI) decisions.
//!
//! Inputs are exported decision and survey rows. Reliance is measured as a
//! share of all responses, so accuracy, over-reliance and under-reliance
//! partition every condition's decisions.

mod fairness;
mod likert;
mod metrics;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::study::Condition;

pub use fairness::{compute_fairness, fairness_from_labels, Fairness, GroupRates};
pub use likert::{aggregate_likert, LikertSummary};
pub use metrics::{
    compute_accuracy_f1, compute_avg_time, compute_reliance, AccuracyF1, Confusion, Estimate, Reliance,
};
pub use report::{
    build_report, format_decimal, format_estimate, format_likert, MetricsReport, Report, ReportOptions,
};

/// How standard errors treat repeated responses of one participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    /// Every response is one observation.
    #[default]
    Pooled,
    /// Participant means are the observations.
    Clustered,
}

impl SeMode {
    pub fn describe(self) -> &'static str {
        match self {
            SeMode::Pooled => "pooled over responses",
            SeMode::Clustered => "clustered by participant",
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no responses to evaluate")]
    Empty,
    #[error("response {row} has no AI prediction to measure reliance against")]
    MissingAiPrediction { row: usize },
    #[error("response {row} lacks protected attribute `{feature}`")]
    MissingProtected { row: usize, feature: String },
    #[error("`{0}` is not a protected attribute in the codebook")]
    UnknownProtected(String),
    #[error("question {question} is not shown in condition {condition}")]
    NotVisible { question: String, condition: Condition },
    #[error("answer {value} to {question} is outside the scale")]
    InvalidAnswer { question: String, value: u8 },
    #[error("decision identity violated: {correct} correct + {over} over + {under} under != {n}")]
    Identity {
        correct: usize,
        over: usize,
        under: usize,
        n: usize,
    },
}
