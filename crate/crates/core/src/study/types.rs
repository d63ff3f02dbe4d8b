use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AttentionBank, AttentionPrompt, Condition, StudyConfig, SurveyBank, SurveyQuestion};
use crate::data::{Codebook, Instance};
use crate::explain::ExplanationRecord;
use crate::model::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Consent,
    Instructions,
    Tasks,
    Survey,
    Done,
    Disqualified,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Disqualified)
    }

    /// Whether a session may move from `self` to `next`.
    pub fn can_advance_to(self, next: Phase) -> bool {
        matches!(
            (self, next),
            (Phase::Consent, Phase::Instructions)
                | (Phase::Instructions, Phase::Tasks)
                | (Phase::Instructions, Phase::Disqualified)
                | (Phase::Tasks, Phase::Survey)
                | (Phase::Survey, Phase::Done)
        )
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("phase serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub study_id: String,
    pub participant_id: String,
    pub condition: Condition,
    pub phase: Phase,
    pub task_list: Vec<String>,
    pub task_cursor: usize,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    /// When the current task was last served.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub served_at: Option<DateTime<Utc>>,
}

/// One pool instance with everything the task page needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub instance: Instance,
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<ExplanationRecord>,
}

/// Everything a study needs after creation. Immutable once stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub config: StudyConfig,
    pub codebook: Codebook,
    pub model_fingerprint: String,
    pub pool: Vec<PoolItem>,
    pub survey_bank: SurveyBank,
    pub attention_bank: AttentionBank,
    pub consent_text: String,
    pub created_at: DateTime<Utc>,
}

impl StudyRecord {
    pub fn item(&self, instance_id: &str) -> Option<&PoolItem> {
        self.pool.iter().find(|p| p.instance.id == instance_id)
    }
}

/// Response to create-study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCreated {
    pub study_id: String,
    pub condition: Condition,
    pub pool_size: usize,
}

/// Public study description: consent text, attention prompts and the
/// survey questions visible in this condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyInfo {
    pub study_id: String,
    pub dataset_name: String,
    pub condition: Condition,
    pub tasks_per_participant: usize,
    pub target_participants: usize,
    pub consent_text: String,
    pub attention_checks: Vec<AttentionPrompt>,
    pub survey_scale: Vec<String>,
    pub survey_questions: Vec<SurveyQuestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongExplanation {
    pub feature: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionOption {
    pub value: u8,
    pub meaning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionView {
    pub label: u8,
    pub meaning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionView {
    pub feature: String,
    pub score: f64,
}

/// What the task page renders for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub session_id: String,
    pub instance_id: String,
    /// Zero-based position in the participant's task list.
    pub task_index: usize,
    pub tasks_total: usize,
    pub features: Vec<FeatureRow>,
    pub long_explanations: Vec<LongExplanation>,
    pub decision_options: Vec<DecisionOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ai_prediction: Option<PredictionView>,
    /// Sorted by descending absolute score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributions: Option<Vec<AttributionView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart_caption: Option<String>,
    pub served_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRequest {
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionAnswers {
    pub answers: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionOutcome {
    Pass,
    Disqualified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSubmission {
    pub instance_id: String,
    pub human_decision: u8,
    /// Time on page as measured by the client; stored, not used for metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_dwell_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionAck {
    pub session_id: String,
    pub instance_id: String,
    pub elapsed_ms: u64,
    pub task_cursor: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveySubmission {
    pub answers: BTreeMap<String, u8>,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResponse {
    pub session_id: String,
    pub task_index: usize,
    pub instance_id: String,
    pub human_decision: u8,
    /// Shown prediction; absent in condition F.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ai_prediction: Option<u8>,
    pub ground_truth: u8,
    pub elapsed_ms: u64,
    pub served_at: DateTime<Utc>,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_dwell_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub session_id: String,
    pub answers: BTreeMap<String, u8>,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    pub submitted_at: DateTime<Utc>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_machine_only_moves_forward() {
        use Phase::*;
        let all = [Consent, Instructions, Tasks, Survey, Done, Disqualified];
        let allowed = [
            (Consent, Instructions),
            (Instructions, Tasks),
            (Instructions, Disqualified),
            (Tasks, Survey),
            (Survey, Done),
        ];
        for a in all {
            for b in all {
                assert_eq!(a.can_advance_to(b), allowed.contains(&(a, b)), "{a} -> {b}");
            }
        }
        assert!(Done.is_terminal() && Disqualified.is_terminal());
        assert_eq!(Instructions.to_string(), "instructions");
    }
}
