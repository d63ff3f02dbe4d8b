use serde::{Deserialize, Serialize};

use super::{
    AttentionAnswers, AttentionOutcome, DecisionAck, DecisionSubmission, ResponseSet, Session, StudyConfig,
    StudyCreated, StudyInfo, SurveySubmission, TaskPayload,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    NotFound,
    /// Duplicate participant, duplicate submission or existing study.
    Conflict,
    WrongPhase,
    OutOfOrder,
    Validation,
    /// Study inputs are missing or do not belong together.
    Precondition,
    Storage,
    Internal,
}

impl ErrorKind {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorKind::NotFound => 404,
            ErrorKind::Conflict | ErrorKind::WrongPhase | ErrorKind::OutOfOrder => 409,
            ErrorKind::Validation | ErrorKind::Precondition => 422,
            ErrorKind::Storage | ErrorKind::Internal => 500,
        }
    }
}

/// Error body of every API operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct ApiError {
    #[serde(rename = "error")]
    pub kind: ErrorKind,
    pub message: String,
    /// The existing session when opening a duplicate participant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            session_id: None,
        }
    }
}

impl From<super::StoreError> for ApiError {
    fn from(e: super::StoreError) -> Self {
        ApiError::new(ErrorKind::Storage, e.to_string())
    }
}

/// The participant and researcher operations, implemented in process by
/// [`super::StudyService`] and over HTTP by the server crate's client.
pub trait StudyApi {
    fn create_study(&self, config: StudyConfig) -> Result<StudyCreated, ApiError>;
    fn study_info(&self, study_id: &str) -> Result<StudyInfo, ApiError>;
    fn open_session(&self, study_id: &str, participant_id: &str) -> Result<Session, ApiError>;
    fn find_session(&self, study_id: &str, participant_id: &str) -> Result<Session, ApiError>;
    fn get_session(&self, session_id: &str) -> Result<Session, ApiError>;
    fn consent(&self, session_id: &str, agree: bool) -> Result<Session, ApiError>;
    fn attention_check(&self, session_id: &str, answers: &AttentionAnswers) -> Result<AttentionOutcome, ApiError>;
    fn next_task(&self, session_id: &str) -> Result<TaskPayload, ApiError>;
    fn submit_decision(&self, session_id: &str, decision: &DecisionSubmission) -> Result<DecisionAck, ApiError>;
    fn submit_survey(&self, session_id: &str, survey: &SurveySubmission) -> Result<Session, ApiError>;
    fn export(&self, study_id: &str) -> Result<ResponseSet, ApiError>;
}
