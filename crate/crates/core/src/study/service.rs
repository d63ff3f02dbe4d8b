use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::*;
use crate::clock::Clock;
use crate::data::{draw_participant_tasks, sample_study_pool, Instance};
use crate::hashing;

const STUDIES: &str = "studies";
const SESSIONS: &str = "sessions";
const PARTICIPANTS: &str = "participants";
const RESPONSES: &str = "responses";
const SURVEYS: &str = "surveys";

fn err(kind: ErrorKind, message: impl Into<String>) -> ApiError {
    ApiError::new(kind, message)
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("study documents serialize")
}

fn from_json<T: DeserializeOwned>(collection: &str, key: &str, v: serde_json::Value) -> Result<T, ApiError> {
    serde_json::from_value(v).map_err(|e| err(ErrorKind::Storage, format!("corrupt {collection}/{key}: {e}")))
}

fn response_key(session_id: &str, index: usize) -> String {
    format!("{session_id}/{index:05}")
}

/// The study server's state machine over a [`DocumentStore`].
///
/// Operations on one session are serialized by a per-session lock; distinct
/// sessions only share the store.
pub struct StudyService {
    store: Arc<dyn DocumentStore>,
    clock: Arc<dyn Clock>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    studies: RwLock<HashMap<String, Arc<StudyRecord>>>,
}

impl StudyService {
    pub fn new(store: Arc<dyn DocumentStore>, clock: Arc<dyn Clock>) -> Self {
        Self {
            store,
            clock,
            locks: Mutex::new(HashMap::new()),
            studies: RwLock::new(HashMap::new()),
        }
    }

    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self::new(Arc::new(MemoryStore::new()), clock)
    }

    pub fn store(&self) -> &Arc<dyn DocumentStore> {
        &self.store
    }

    fn lock(&self, key: &str) -> Arc<Mutex<()>> {
        Arc::clone(self.locks.lock().entry(key.to_string()).or_default())
    }

    /// Creates a study from already loaded inputs.
    pub fn create_study_with(&self, config: StudyConfig, assets: StudyAssets) -> Result<StudyCreated, ApiError> {
        let pre = |m: String| err(ErrorKind::Precondition, m);
        if config.pool_size == 0 || config.tasks_per_participant == 0 {
            return Err(err(ErrorKind::Validation, "pool_size and tasks_per_participant must be positive"));
        }
        if config.tasks_per_participant > config.pool_size {
            return Err(err(
                ErrorKind::Validation,
                format!(
                    "tasks_per_participant {} exceeds pool_size {}",
                    config.tasks_per_participant, config.pool_size
                ),
            ));
        }
        assets.survey_bank.validate().map_err(|m| err(ErrorKind::Validation, m))?;
        let codebook = &assets.dataset.codebook;
        assets.checkpoint.verify(codebook).map_err(|e| pre(e.to_string()))?;
        let model = &assets.checkpoint.model;
        let encoder = &assets.checkpoint.encoder;
        let instances = sample_study_pool(&assets.dataset, config.pool_size, config.pool_seed)
            .map_err(|e| err(ErrorKind::Validation, e.to_string()))?;

        let method = config.condition.method();
        let explanations = match (method, &assets.explanations) {
            (Some(_), None) => {
                return Err(pre(format!(
                    "condition {} needs a precomputed explanation set",
                    config.condition
                )))
            }
            (_, e) => e,
        };
        let mut pool = Vec::with_capacity(instances.len());
        for instance in instances {
            let x = encoder.encode_values(&instance).map_err(|e| pre(e.to_string()))?;
            let prediction = model.predict_values(&x).map_err(|e| pre(e.to_string()))?;
            let explanation = match (method, explanations) {
                (Some(m), Some(set)) => {
                    let rec = set
                        .get(&instance.id, m)
                        .ok_or_else(|| pre(format!("no {m} explanation for pool instance `{}`", instance.id)))?;
                    if rec.model_fingerprint != model.train_fingerprint {
                        return Err(pre(format!(
                            "explanation for `{}` was computed for model {}, checkpoint is {}",
                            instance.id, rec.model_fingerprint, model.train_fingerprint
                        )));
                    }
                    if rec.predicted_label != prediction.label {
                        return Err(pre(format!(
                            "explanation for `{}` records label {}, model predicts {}",
                            instance.id, rec.predicted_label, prediction.label
                        )));
                    }
                    Some(rec.clone())
                }
                _ => None,
            };
            pool.push(PoolItem {
                instance,
                prediction,
                explanation,
            });
        }

        let study_id = match &config.study_id {
            Some(id) if !id.trim().is_empty() => id.clone(),
            _ => {
                let ids: Vec<&str> = pool.iter().map(|p| p.instance.id.as_str()).collect();
                let digest = hashing::fingerprint(&(&config, &model.train_fingerprint, codebook.fingerprint(), ids));
                format!("st-{}", &digest[..16])
            }
        };
        let record = StudyRecord {
            study_id: study_id.clone(),
            config: config.clone(),
            codebook: codebook.clone(),
            model_fingerprint: model.train_fingerprint.clone(),
            pool,
            survey_bank: assets.survey_bank,
            attention_bank: assets.attention_bank,
            consent_text: assets.consent_text,
            created_at: self.clock.now(),
        };
        if !self.store.put_if_absent(STUDIES, &study_id, &to_json(&record))? {
            return Err(err(ErrorKind::Conflict, format!("study `{study_id}` already exists")));
        }
        let created = StudyCreated {
            study_id: study_id.clone(),
            condition: record.config.condition,
            pool_size: record.pool.len(),
        };
        self.studies.write().insert(study_id, Arc::new(record));
        Ok(created)
    }

    pub fn study(&self, study_id: &str) -> Result<Arc<StudyRecord>, ApiError> {
        if let Some(s) = self.studies.read().get(study_id) {
            return Ok(Arc::clone(s));
        }
        let doc = self
            .store
            .get(STUDIES, study_id)?
            .ok_or_else(|| err(ErrorKind::NotFound, format!("unknown study `{study_id}`")))?;
        let record: Arc<StudyRecord> = Arc::new(from_json(STUDIES, study_id, doc)?);
        self.studies.write().insert(study_id.to_string(), Arc::clone(&record));
        Ok(record)
    }

    fn save_session(&self, session: &mut Session) -> Result<(), ApiError> {
        session.updated_at = self.clock.now();
        self.store.put(SESSIONS, &session.session_id, &to_json(session))?;
        Ok(())
    }

    /// Loads a session and finishes any transition interrupted between the
    /// response write and the session write.
    fn load_session(&self, session_id: &str) -> Result<Session, ApiError> {
        let doc = self
            .store
            .get(SESSIONS, session_id)?
            .ok_or_else(|| err(ErrorKind::NotFound, format!("unknown session `{session_id}`")))?;
        let mut session: Session = from_json(SESSIONS, session_id, doc)?;
        let mut repaired = false;
        while session.phase == Phase::Tasks
            && session.task_cursor < session.task_list.len()
            && self
                .store
                .get(RESPONSES, &response_key(session_id, session.task_cursor))?
                .is_some()
        {
            session.task_cursor += 1;
            session.served_at = None;
            if session.task_cursor == session.task_list.len() {
                session.phase = Phase::Survey;
            }
            repaired = true;
        }
        if session.phase == Phase::Survey && self.store.get(SURVEYS, session_id)?.is_some() {
            session.phase = Phase::Done;
            repaired = true;
        }
        if repaired {
            self.save_session(&mut session)?;
        }
        Ok(session)
    }

    fn require_phase(session: &Session, phase: Phase) -> Result<(), ApiError> {
        if session.phase == phase {
            Ok(())
        } else {
            Err(err(
                ErrorKind::WrongPhase,
                format!("session is in phase {}, expected {phase}", session.phase),
            ))
        }
    }

    fn advance(session: &mut Session, next: Phase) {
        debug_assert!(session.phase.can_advance_to(next));
        session.phase = next;
    }

    pub fn build_payload(study: &StudyRecord, session: &Session, served_at: DateTime<Utc>) -> Result<TaskPayload, ApiError> {
        let instance_id = &session.task_list[session.task_cursor];
        let item = study
            .item(instance_id)
            .ok_or_else(|| err(ErrorKind::Internal, format!("task `{instance_id}` is not in the pool")))?;
        let codebook = &study.codebook;
        let mut features = Vec::new();
        let mut long_explanations = Vec::new();
        for name in &codebook.display_order {
            let Some(spec) = codebook.feature(name) else { continue };
            let value = item.instance.values.get(name).map(|v| spec.display(v)).unwrap_or_default();
            features.push(FeatureRow {
                feature: name.clone(),
                value,
                unit: spec.unit.clone(),
                description: spec.description.clone(),
            });
            if let Some(text) = &spec.long_explanation {
                long_explanations.push(LongExplanation {
                    feature: name.clone(),
                    text: text.clone(),
                });
            }
        }
        let condition = study.config.condition;
        let ai_prediction = condition.shows_prediction().then(|| PredictionView {
            label: item.prediction.label,
            meaning: codebook.label_meaning(item.prediction.label),
        });
        let (attributions, chart_caption) = match (&item.explanation, condition.method_label()) {
            (Some(rec), Some(label)) => (
                Some(
                    rec.ranked()
                        .into_iter()
                        .map(|f| AttributionView {
                            feature: f.feature.clone(),
                            score: f.score,
                        })
                        .collect(),
                ),
                Some(format!(
                    "Feature importance computed with {label}, ordered by absolute importance. \
                     Positive scores push the prediction towards \"{}\".",
                    codebook.positive_label_meaning
                )),
            ),
            _ => (None, None),
        };
        Ok(TaskPayload {
            session_id: session.session_id.clone(),
            instance_id: instance_id.clone(),
            task_index: session.task_cursor,
            tasks_total: session.task_list.len(),
            features,
            long_explanations,
            decision_options: vec![
                DecisionOption {
                    value: 1,
                    meaning: codebook.label_meaning(1),
                },
                DecisionOption {
                    value: 0,
                    meaning: codebook.label_meaning(0),
                },
            ],
            ai_prediction,
            attributions,
            chart_caption,
            served_at,
        })
    }

    fn decision_row(study: &StudyRecord, session: &Session, r: TaskResponse) -> DecisionRow {
        let item = study.item(&r.instance_id);
        let protected = item
            .map(|item| {
                study
                    .codebook
                    .protected_attributes
                    .iter()
                    .filter_map(|pa| {
                        let spec = study.codebook.feature(&pa.feature)?;
                        let v = item.instance.values.get(&pa.feature)?;
                        Some((pa.feature.clone(), spec.display(v)))
                    })
                    .collect()
            })
            .unwrap_or_default();
        DecisionRow {
            study_id: study.study_id.clone(),
            session_id: session.session_id.clone(),
            participant_id: session.participant_id.clone(),
            condition: session.condition,
            task_index: r.task_index,
            instance_id: r.instance_id,
            human_decision: r.human_decision,
            ai_prediction: r.ai_prediction,
            model_prediction: item.map(|i| i.prediction.label),
            ground_truth: r.ground_truth,
            elapsed_ms: r.elapsed_ms,
            served_at: r.served_at,
            submitted_at: r.submitted_at,
            client_dwell_ms: r.client_dwell_ms,
            protected,
        }
    }
}

impl StudyApi for StudyService {
    fn create_study(&self, config: StudyConfig) -> Result<StudyCreated, ApiError> {
        let assets = StudyAssets::load(&config).map_err(|m| err(ErrorKind::Precondition, m))?;
        self.create_study_with(config, assets)
    }

    fn study_info(&self, study_id: &str) -> Result<StudyInfo, ApiError> {
        let s = self.study(study_id)?;
        Ok(StudyInfo {
            study_id: s.study_id.clone(),
            dataset_name: s.config.dataset_name.clone(),
            condition: s.config.condition,
            tasks_per_participant: s.config.tasks_per_participant,
            target_participants: s.config.target_participants,
            consent_text: s.consent_text.clone(),
            attention_checks: s.attention_bank.prompts(),
            survey_scale: s.survey_bank.scale.clone(),
            survey_questions: s.survey_bank.visible(s.config.condition).into_iter().cloned().collect(),
        })
    }

    fn open_session(&self, study_id: &str, participant_id: &str) -> Result<Session, ApiError> {
        if participant_id.trim().is_empty() {
            return Err(err(ErrorKind::Validation, "participant_id must not be empty"));
        }
        let study = self.study(study_id)?;
        let lock = self.lock(&format!("study:{study_id}"));
        let _guard = lock.lock();
        let index_key = format!("{study_id}/{participant_id}");
        if let Some(existing) = self.store.get(PARTICIPANTS, &index_key)? {
            let mut e = err(
                ErrorKind::Conflict,
                format!("participant `{participant_id}` already has a session in this study"),
            );
            e.session_id = existing.as_str().map(String::from);
            return Err(e);
        }
        let pool: Vec<Instance> = study.pool.iter().map(|p| p.instance.clone()).collect();
        let seed = hashing::derive_seed(study.config.pool_seed, participant_id);
        let tasks = draw_participant_tasks(&pool, study.config.tasks_per_participant, seed)
            .map_err(|e| err(ErrorKind::Internal, e.to_string()))?;
        let digest = hashing::fingerprint_parts(&[study_id.as_bytes(), participant_id.as_bytes()]);
        let now = self.clock.now();
        let mut session = Session {
            session_id: format!("se-{}", &digest[..16]),
            study_id: study_id.to_string(),
            participant_id: participant_id.to_string(),
            condition: study.config.condition,
            phase: Phase::Consent,
            task_list: tasks.into_iter().map(|i| i.id).collect(),
            task_cursor: 0,
            created_at: now,
            updated_at: now,
            demographics: BTreeMap::new(),
            served_at: None,
        };
        self.save_session(&mut session)?;
        self.store
            .put_if_absent(PARTICIPANTS, &index_key, &serde_json::Value::String(session.session_id.clone()))?;
        Ok(session)
    }

    fn find_session(&self, study_id: &str, participant_id: &str) -> Result<Session, ApiError> {
        let doc = self
            .store
            .get(PARTICIPANTS, &format!("{study_id}/{participant_id}"))?
            .ok_or_else(|| err(ErrorKind::NotFound, format!("no session for `{participant_id}`")))?;
        let id = doc
            .as_str()
            .ok_or_else(|| err(ErrorKind::Storage, "corrupt participant index"))?;
        self.get_session(id)
    }

    fn get_session(&self, session_id: &str) -> Result<Session, ApiError> {
        let lock = self.lock(session_id);
        let _guard = lock.lock();
        self.load_session(session_id)
    }

    fn consent(&self, session_id: &str, agree: bool) -> Result<Session, ApiError> {
        let lock = self.lock(session_id);
        let _guard = lock.lock();
        let mut s = self.load_session(session_id)?;
        Self::require_phase(&s, Phase::Consent)?;
        if !agree {
            return Err(err(ErrorKind::Validation, "consent is required to take part"));
        }
        Self::advance(&mut s, Phase::Instructions);
        self.save_session(&mut s)?;
        Ok(s)
    }

    fn attention_check(&self, session_id: &str, answers: &AttentionAnswers) -> Result<AttentionOutcome, ApiError> {
        let lock = self.lock(session_id);
        let _guard = lock.lock();
        let mut s = self.load_session(session_id)?;
        Self::require_phase(&s, Phase::Instructions)?;
        let study = self.study(&s.study_id)?;
        let outcome = if study.attention_bank.grade(s.condition, &answers.answers) {
            Self::advance(&mut s, Phase::Tasks);
            AttentionOutcome::Pass
        } else {
            Self::advance(&mut s, Phase::Disqualified);
            AttentionOutcome::Disqualified
        };
        self.save_session(&mut s)?;
        Ok(outcome)
    }

    fn next_task(&self, session_id: &str) -> Result<TaskPayload, ApiError> {
        let lock = self.lock(session_id);
        let _guard = lock.lock();
        let mut s = self.load_session(session_id)?;
        Self::require_phase(&s, Phase::Tasks)?;
        let study = self.study(&s.study_id)?;
        let now = self.clock.now();
        let payload = Self::build_payload(&study, &s, now)?;
        s.served_at = Some(now);
        self.save_session(&mut s)?;
        Ok(payload)
    }

    fn submit_decision(&self, session_id: &str, decision: &DecisionSubmission) -> Result<DecisionAck, ApiError> {
        let lock = self.lock(session_id);
        let _guard = lock.lock();
        let mut s = self.load_session(session_id)?;
        if s.task_list[..s.task_cursor].contains(&decision.instance_id) {
            return Err(err(
                ErrorKind::Conflict,
                format!("a decision for `{}` was already submitted", decision.instance_id),
            ));
        }
        Self::require_phase(&s, Phase::Tasks)?;
        let current = &s.task_list[s.task_cursor];
        if &decision.instance_id != current {
            return Err(err(
                ErrorKind::OutOfOrder,
                format!("`{}` is not the current task (`{current}`)", decision.instance_id),
            ));
        }
        if decision.human_decision > 1 {
            return Err(err(ErrorKind::Validation, "human_decision must be 0 or 1"));
        }
        let served_at = s
            .served_at
            .ok_or_else(|| err(ErrorKind::OutOfOrder, "the current task has not been served"))?;
        let study = self.study(&s.study_id)?;
        let item = study
            .item(current)
            .ok_or_else(|| err(ErrorKind::Internal, format!("task `{current}` is not in the pool")))?;
        let submitted_at = self.clock.now();
        let elapsed_ms = (submitted_at - served_at).num_milliseconds().max(0) as u64;
        let response = TaskResponse {
            session_id: s.session_id.clone(),
            task_index: s.task_cursor,
            instance_id: current.clone(),
            human_decision: decision.human_decision,
            ai_prediction: s.condition.shows_prediction().then_some(item.prediction.label),
            ground_truth: item.instance.label,
            elapsed_ms,
            served_at,
            submitted_at,
            client_dwell_ms: decision.client_dwell_ms,
        };
        self.store
            .put(RESPONSES, &response_key(&s.session_id, s.task_cursor), &to_json(&response))?;
        s.task_cursor += 1;
        s.served_at = None;
        if s.task_cursor == s.task_list.len() {
            Self::advance(&mut s, Phase::Survey);
        }
        self.save_session(&mut s)?;
        Ok(DecisionAck {
            session_id: s.session_id.clone(),
            instance_id: response.instance_id,
            elapsed_ms,
            task_cursor: s.task_cursor,
            phase: s.phase,
        })
    }

    fn submit_survey(&self, session_id: &str, survey: &SurveySubmission) -> Result<Session, ApiError> {
        let lock = self.lock(session_id);
        let _guard = lock.lock();
        let mut s = self.load_session(session_id)?;
        Self::require_phase(&s, Phase::Survey)?;
        let study = self.study(&s.study_id)?;
        let bank = &study.survey_bank;
        let visible = bank.visible_ids(s.condition);
        let missing: Vec<&String> = visible.iter().filter(|q| !survey.answers.contains_key(*q)).collect();
        let extra: Vec<&String> = survey.answers.keys().filter(|q| !visible.contains(*q)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
            return Err(err(
                ErrorKind::Validation,
                format!(
                    "answers must cover exactly the questions shown in {}; missing [{}], not shown [{}]",
                    s.condition,
                    list(&missing),
                    list(&extra)
                ),
            ));
        }
        let max = bank.max_score();
        if let Some((q, v)) = survey.answers.iter().find(|(_, v)| !(1..=max).contains(*v)) {
            return Err(err(ErrorKind::Validation, format!("answer to {q} is {v}, expected 1..={max}")));
        }
        let response = SurveyResponse {
            session_id: s.session_id.clone(),
            answers: survey.answers.clone(),
            demographics: survey.demographics.clone(),
            submitted_at: self.clock.now(),
        };
        self.store.put(SURVEYS, &s.session_id, &to_json(&response))?;
        s.demographics = survey.demographics.clone();
        Self::advance(&mut s, Phase::Done);
        self.save_session(&mut s)?;
        Ok(s)
    }

    fn export(&self, study_id: &str) -> Result<ResponseSet, ApiError> {
        let study = self.study(study_id)?;
        let mut set = ResponseSet::default();
        for (key, doc) in self.store.list(PARTICIPANTS, &format!("{study_id}/"))? {
            let session_id = doc
                .as_str()
                .ok_or_else(|| err(ErrorKind::Storage, format!("corrupt participant index {key}")))?;
            let session = self.get_session(session_id)?;
            match session.phase {
                Phase::Done => {
                    for (k, doc) in self.store.list(RESPONSES, &format!("{session_id}/"))? {
                        let r: TaskResponse = from_json(RESPONSES, &k, doc)?;
                        set.decisions.push(Self::decision_row(&study, &session, r));
                    }
                    if let Some(doc) = self.store.get(SURVEYS, session_id)? {
                        let r: SurveyResponse = from_json(SURVEYS, session_id, doc)?;
                        set.surveys.push(SurveyRow {
                            study_id: study_id.to_string(),
                            session_id: session.session_id.clone(),
                            participant_id: session.participant_id.clone(),
                            condition: session.condition,
                            answers: r.answers,
                            demographics: r.demographics,
                            submitted_at: r.submitted_at,
                        });
                    }
                }
                phase => set.exclusions.push(Exclusion {
                    session_id: session.session_id.clone(),
                    participant_id: session.participant_id.clone(),
                    phase,
                    reason: if phase == Phase::Disqualified {
                        "failed attention check".to_string()
                    } else {
                        format!(
                            "incomplete: stopped in phase {phase} after {} of {} tasks",
                            session.task_cursor,
                            session.task_list.len()
                        )
                    },
                }),
            }
        }
        Ok(set)
    }
}

/// Hands out studies in turn, for running several conditions from one
/// recruitment link.
#[derive(Debug)]
pub struct RoundRobin {
    studies: Vec<String>,
    next: AtomicUsize,
}

impl RoundRobin {
    pub fn new(studies: Vec<String>) -> Self {
        assert!(!studies.is_empty(), "round robin needs at least one study");
        Self {
            studies,
            next: AtomicUsize::new(0),
        }
    }

    pub fn assign(&self) -> &str {
        let i = self.next.fetch_add(1, Ordering::Relaxed);
        &self.studies[i % self.studies.len()]
    }

    /// Opens a session for `participant_id` in the next study.
    pub fn open_session<A: StudyApi + ?Sized>(&self, api: &A, participant_id: &str) -> Result<Session, ApiError> {
        api.open_session(self.assign(), participant_id)
    }
}
