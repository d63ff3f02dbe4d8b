//! Human-centered evaluation of post hoc explanations.
//!
//! The crate covers the whole study pipeline for tabular decision tasks:
//!
//! * [`data`]: codebook-driven ingestion, stratified splits, study pools and
//!   encoding of instances into model space.
//! * [`model`]: logistic and feedforward classifiers with input gradients.
//! * [`explain`]: six feature-attribution methods plus an exact Shapley oracle.
//! * [`pipeline`]: from a main configuration file to study artifacts.
//! * [`study`]: the four-phase participant flow, task payloads and persistence.
//! * [`evaluation`]: decision quality, reliance, fairness and Likert summaries.
//! * [`power`]: one-way ANOVA power, sample sizes and cost estimates.
//! * [`simulate`]: synthetic participants that drive the study API.
//! * [`card`]: the evaluation card checklist.

pub mod card;
pub mod clock;
pub mod data;
pub mod evaluation;
pub mod exec;
pub mod explain;
pub mod hashing;
pub mod model;
pub mod pipeline;
pub mod power;
pub mod simulate;
pub mod study;

pub use clock::{Clock, ManualClock, SystemClock};
pub use exec::Execution;
