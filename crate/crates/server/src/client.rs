use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use xaistudy::study::{
    ApiError, AttentionAnswers, AttentionOutcome, ConsentRequest, DecisionAck, DecisionSubmission, ErrorKind,
    ResponseSet, Session, StudyApi, StudyConfig, StudyCreated, StudyInfo, SurveySubmission, TaskPayload,
};

use crate::{AttentionReply, ExportFormat, OpenSessionRequest};

/// [`StudyApi`] over HTTP.
#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    http: Client,
}

fn kind_for(status: StatusCode) -> ErrorKind {
    match status.as_u16() {
        404 => ErrorKind::NotFound,
        409 => ErrorKind::Conflict,
        400 | 422 => ErrorKind::Validation,
        _ => ErrorKind::Internal,
    }
}

/// Path segments are ids chosen by researchers; escape anything unusual.
fn segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

impl HttpClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let http = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client builds");
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, req: RequestBuilder) -> Result<String, ApiError> {
        let resp = req
            .send()
            .map_err(|e| ApiError::new(ErrorKind::Internal, format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ApiError::new(ErrorKind::Internal, format!("transport: {e}")))?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(serde_json::from_str::<ApiError>(&text)
                .unwrap_or_else(|_| ApiError::new(kind_for(status), format!("HTTP {status}: {text}"))))
        }
    }

    fn decode<T: DeserializeOwned>(text: &str) -> Result<T, ApiError> {
        serde_json::from_str(text).map_err(|e| ApiError::new(ErrorKind::Internal, format!("response body: {e}")))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ApiError> {
        Self::decode(&self.send(self.http.get(self.url(path)))?)
    }

    fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ApiError> {
        Self::decode(&self.send(self.http.post(self.url(path)).json(body))?)
    }

    /// The export in the requested representation, as text.
    pub fn export_text(&self, study_id: &str, format: ExportFormat) -> Result<String, ApiError> {
        let f = match format {
            ExportFormat::Json => "json",
            ExportFormat::DecisionsCsv => "decisions_csv",
            ExportFormat::SurveysCsv => "surveys_csv",
        };
        self.send(
            self.http
                .get(self.url(&format!("/studies/{}/export?format={f}", segment(study_id)))),
        )
    }
}

impl StudyApi for HttpClient {
    fn create_study(&self, config: StudyConfig) -> Result<StudyCreated, ApiError> {
        self.post("/studies", &config)
    }

    fn study_info(&self, study_id: &str) -> Result<StudyInfo, ApiError> {
        self.get(&format!("/studies/{}", segment(study_id)))
    }

    fn open_session(&self, study_id: &str, participant_id: &str) -> Result<Session, ApiError> {
        self.post(
            &format!("/studies/{}/sessions", segment(study_id)),
            &OpenSessionRequest {
                participant_id: participant_id.to_string(),
            },
        )
    }

    fn find_session(&self, study_id: &str, participant_id: &str) -> Result<Session, ApiError> {
        self.get(&format!(
            "/studies/{}/participants/{}",
            segment(study_id),
            segment(participant_id)
        ))
    }

    fn get_session(&self, session_id: &str) -> Result<Session, ApiError> {
        self.get(&format!("/sessions/{}", segment(session_id)))
    }

    fn consent(&self, session_id: &str, agree: bool) -> Result<Session, ApiError> {
        self.post(&format!("/sessions/{}/consent", segment(session_id)), &ConsentRequest { agree })
    }

    fn attention_check(&self, session_id: &str, answers: &AttentionAnswers) -> Result<AttentionOutcome, ApiError> {
        let reply: AttentionReply = self.post(&format!("/sessions/{}/attention-check", segment(session_id)), answers)?;
        Ok(reply.outcome)
    }

    fn next_task(&self, session_id: &str) -> Result<TaskPayload, ApiError> {
        Self::decode(&self.send(self.http.post(self.url(&format!("/sessions/{}/next-task", segment(session_id)))))?)
    }

    fn submit_decision(&self, session_id: &str, decision: &DecisionSubmission) -> Result<DecisionAck, ApiError> {
        self.post(&format!("/sessions/{}/decisions", segment(session_id)), decision)
    }

    fn submit_survey(&self, session_id: &str, survey: &SurveySubmission) -> Result<Session, ApiError> {
        self.post(&format!("/sessions/{}/survey", segment(session_id)), survey)
    }

    fn export(&self, study_id: &str) -> Result<ResponseSet, ApiError> {
        Self::decode(&self.export_text(study_id, ExportFormat::Json)?)
    }
}
