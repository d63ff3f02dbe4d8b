//! HTTP front end of the study service and a blocking client for it.
//!
//! Every endpoint answers JSON. Failures carry an [`ApiError`] body whose
//! `error` field names the [`xaistudy::study::ErrorKind`].
//!
//! | Method | Path | Body | Reply |
//! |---|---|---|---|
//! | POST | `/studies` | `StudyConfig` | 201 `StudyCreated` |
//! | GET | `/studies/{study}` | | `StudyInfo` |
//! | POST | `/studies/{study}/sessions` | `{"participant_id"}` | 201 `Session` |
//! | GET | `/studies/{study}/participants/{participant}` | | `Session` |
//! | GET | `/studies/{study}/export?format=json\|decisions_csv\|surveys_csv` | | export |
//! | GET | `/sessions/{session}` | | `Session` |
//! | POST | `/sessions/{session}/consent` | `{"agree"}` | `Session` |
//! | POST | `/sessions/{session}/attention-check` | `{"answers"}` | `{"outcome"}` |
//! | POST | `/sessions/{session}/next-task` | | `TaskPayload` |
//! | POST | `/sessions/{session}/decisions` | `DecisionSubmission` | `DecisionAck` |
//! | POST | `/sessions/{session}/survey` | `SurveySubmission` | `Session` |

mod client;
mod routes;

use serde::{Deserialize, Serialize};
use xaistudy::study::AttentionOutcome;

pub use client::HttpClient;
pub use routes::{router, serve, spawn_server, ServerHandle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenSessionRequest {
    pub participant_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionReply {
    pub outcome: AttentionOutcome,
}

/// Representation requested from the export endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    #[default]
    Json,
    DecisionsCsv,
    SurveysCsv,
}
