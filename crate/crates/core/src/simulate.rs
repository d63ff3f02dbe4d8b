//! Synthetic participants that complete studies through [`StudyApi`].
//!
//! The behavior model has two probabilities so that expected metrics have a
//! closed form. With adoption probability `p`, AI accuracy `a` on the served
//! instances and unassisted accuracy `b`:
//!
//! * accuracy = `p a + (1 - p) b`
//! * over-reliance = `p (1 - a) + (1 - p)(1 - a)(1 - b)`
//! * under-reliance = `(1 - p) a (1 - b)`
//!
//! When no prediction is shown, `p` is effectively zero.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ManualClock;
use crate::data::Dataset;
use crate::hashing::derive_seed;
use crate::study::{
    ApiError, AttentionAnswers, AttentionBank, DecisionSubmission, ResponseSet, StudyApi, SurveySubmission,
    TaskPayload,
};

/// Floor on simulated task durations.
pub const MIN_ELAPSED_MS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSeconds {
    pub mean: f64,
    pub sd: f64,
}

impl Default for TaskSeconds {
    fn default() -> Self {
        Self { mean: 6.0, sd: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorModel {
    /// Probability of a correct decision without copying the AI.
    pub base_accuracy: f64,
    /// Probability of copying a shown AI prediction.
    pub adoption_prob: f64,
    #[serde(default)]
    pub per_task_seconds: TaskSeconds,
    /// Probability of answering each attention-check item correctly.
    #[serde(default = "one")]
    pub attention_accuracy: f64,
    /// Weights over answers 1..=5 per question; uniform when absent.
    #[serde(default)]
    pub likert_policy: BTreeMap<String, [f64; 5]>,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("{0}")]
    Io(String),
    #[error("behavior file: {0}")]
    Parse(String),
    #[error("invalid behavior: {0}")]
    Invalid(String),
}

impl BehaviorModel {
    pub fn new(base_accuracy: f64, adoption_prob: f64, seed: u64) -> Self {
        Self {
            base_accuracy,
            adoption_prob,
            per_task_seconds: TaskSeconds::default(),
            attention_accuracy: 1.0,
            likert_policy: BTreeMap::new(),
            demographics: BTreeMap::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(BehaviorError::Invalid(format!("{name} = {v} is not in [0, 1]")))
            }
        };
        unit("base_accuracy", self.base_accuracy)?;
        unit("adoption_prob", self.adoption_prob)?;
        unit("attention_accuracy", self.attention_accuracy)?;
        if !(self.per_task_seconds.mean > 0.0) || !(self.per_task_seconds.sd >= 0.0) {
            return Err(BehaviorError::Invalid(
                "per_task_seconds needs mean > 0 and sd >= 0".into(),
            ));
        }
        for (q, w) in &self.likert_policy {
            if w.iter().any(|v| !(*v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(BehaviorError::Invalid(format!("likert weights for {q} must be non-negative and not all zero")));
            }
        }
        Ok(())
    }

    /// Reads a TOML behavior file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, BehaviorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BehaviorError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, BehaviorError> {
        let b: Self = toml::from_str(text).map_err(|e| BehaviorError::Parse(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulatedDecision {
    pub decision: u8,
    pub elapsed_ms: u64,
}

/// One participant's decision on one task.
pub fn simulate_decision<R: Rng + ?Sized>(
    behavior: &BehaviorModel,
    payload: &TaskPayload,
    truth: u8,
    rng: &mut R,
) -> SimulatedDecision {
    let decision = match &payload.ai_prediction {
        Some(ai) if rng.random_bool(behavior.adoption_prob) => ai.label,
        _ => {
            if rng.random_bool(behavior.base_accuracy) {
                truth
            } else {
                1 - truth
            }
        }
    };
    SimulatedDecision {
        decision,
        elapsed_ms: draw_elapsed(&behavior.per_task_seconds, rng),
    }
}

fn draw_elapsed<R: Rng + ?Sized>(t: &TaskSeconds, rng: &mut R) -> u64 {
    let normal = Normal::new(t.mean * 1000.0, t.sd * 1000.0).expect("validated task time");
    for _ in 0..1000 {
        let v: f64 = normal.sample(rng);
        if v >= MIN_ELAPSED_MS as f64 {
            return v.round() as u64;
        }
    }
    MIN_ELAPSED_MS
}

fn draw_likert<R: Rng + ?Sized>(weights: Option<&[f64; 5]>, rng: &mut R) -> u8 {
    let w = weights.copied().unwrap_or([1.0; 5]);
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i as u8 + 1;
        }
        u -= wi;
    }
    5
}

/// Lets simulated time pass between serving a task and submitting it.
pub trait Pacer: Send + Sync {
    fn wait(&self, ms: u64);
}

/// Does not wait. Server-measured times will be near zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoPacer;

impl Pacer for NoPacer {
    fn wait(&self, _ms: u64) {}
}

/// Advances a manual clock shared with an in-process server.
impl Pacer for ManualClock {
    fn wait(&self, ms: u64) {
        self.advance_ms(ms as i64);
    }
}

impl<P: Pacer + ?Sized> Pacer for Arc<P> {
    fn wait(&self, ms: u64) {
        (**self).wait(ms)
    }
}

/// Sleeps for a fraction of the simulated time.
#[derive(Debug, Clone, Copy)]
pub struct SleepPacer {
    pub scale: f64,
}

impl Pacer for SleepPacer {
    fn wait(&self, ms: u64) {
        std::thread::sleep(std::time::Duration::from_secs_f64(ms as f64 * self.scale / 1000.0));
    }
}

/// What a simulated participant knows beyond the task page.
#[derive(Debug, Clone)]
pub struct Knowledge {
    /// Ground-truth label of every instance that may be served.
    pub truth: BTreeMap<String, u8>,
    pub attention: AttentionBank,
}

impl Knowledge {
    pub fn from_dataset(dataset: &Dataset, attention: AttentionBank) -> Self {
        Self {
            truth: dataset.instances.iter().map(|i| (i.id.clone(), i.label)).collect(),
            attention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationOptions {
    pub participants: usize,
    /// Index of the first participant, for adding to an existing study.
    pub first_index: usize,
    /// Worker threads; participants are split across them.
    pub threads: usize,
}

impl SimulationOptions {
    pub fn sequential(participants: usize) -> Self {
        Self {
            participants,
            first_index: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Error)]
#[error("participant {participant} (session {session}): {source}")]
pub struct SimulationError {
    pub participant: String,
    pub session: String,
    #[source]
    pub source: ApiError,
}

pub fn participant_id(index: usize) -> String {
    format!("sim-{index:04}")
}

/// Runs one participant through every phase. Returns their session id.
pub fn run_participant<A: StudyApi + ?Sized>(
    api: &A,
    study_id: &str,
    participant: &str,
    behavior: &BehaviorModel,
    knowledge: &Knowledge,
    pacer: &dyn Pacer,
) -> Result<String, SimulationError> {
    let fail = |session: &str, source: ApiError| SimulationError {
        participant: participant.to_string(),
        session: session.to_string(),
        source,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(behavior.seed, participant));
    let info = api.study_info(study_id).map_err(|e| fail("-", e))?;
    let session = api.open_session(study_id, participant).map_err(|e| fail("-", e))?;
    let sid = session.session_id.clone();
    api.consent(&sid, true).map_err(|e| fail(&sid, e))?;

    let key = knowledge.attention.answer_key(info.condition);
    let answers = info
        .attention_checks
        .iter()
        .map(|p| {
            let right = key.get(&p.id).copied().unwrap_or(true);
            let correct = rng.random_bool(behavior.attention_accuracy);
            (p.id.clone(), if correct { right } else { !right })
        })
        .collect();
    let outcome = api
        .attention_check(&sid, &AttentionAnswers { answers })
        .map_err(|e| fail(&sid, e))?;
    if outcome == crate::study::AttentionOutcome::Disqualified {
        return Ok(sid);
    }

    for _ in 0..info.tasks_per_participant {
        let payload = api.next_task(&sid).map_err(|e| fail(&sid, e))?;
        let truth = knowledge.truth.get(&payload.instance_id).copied().ok_or_else(|| {
            fail(
                &sid,
                ApiError::new(
                    crate::study::ErrorKind::Precondition,
                    format!("no ground truth for instance {}", payload.instance_id),
                ),
            )
        })?;
        let d = simulate_decision(behavior, &payload, truth, &mut rng);
        pacer.wait(d.elapsed_ms);
        api.submit_decision(
            &sid,
            &DecisionSubmission {
                instance_id: payload.instance_id,
                human_decision: d.decision,
                client_dwell_ms: Some(d.elapsed_ms),
            },
        )
        .map_err(|e| fail(&sid, e))?;
    }

    let answers = info
        .survey_questions
        .iter()
        .map(|q| (q.id.clone(), draw_likert(behavior.likert_policy.get(&q.id), &mut rng)))
        .collect();
    api.submit_survey(
        &sid,
        &SurveySubmission {
            answers,
            demographics: behavior.demographics.clone(),
        },
    )
    .map_err(|e| fail(&sid, e))?;
    Ok(sid)
}

/// Runs `options.participants` simulated participants and returns the
/// study's export.
///
/// With one thread, participants run in index order and a [`ManualClock`]
/// pacer makes the export reproducible byte for byte.
pub fn run_simulated_study<A: StudyApi + Sync + ?Sized>(
    api: &A,
    study_id: &str,
    behavior: &BehaviorModel,
    knowledge: &Knowledge,
    pacer: &dyn Pacer,
    options: SimulationOptions,
) -> Result<ResponseSet, SimulationError> {
    let ids: Vec<String> = (0..options.participants)
        .map(|i| participant_id(options.first_index + i))
        .collect();
    let threads = options.threads.max(1).min(ids.len().max(1));
    if threads == 1 {
        for p in &ids {
            run_participant(api, study_id, p, behavior, knowledge, pacer)?;
        }
    } else {
        let chunk = ids.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = ids
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        for p in part {
                            run_participant(api, study_id, p, behavior, knowledge, pacer)?;
                        }
                        Ok::<(), SimulationError>(())
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("participant thread panicked"))
                .collect::<Result<Vec<()>, _>>()
        })?;
    }
    api.export(study_id).map_err(|source| SimulationError {
        participant: "-".into(),
        session: "-".into(),
        source,
    })
}

/// Closed-form metric expectations for a behavior model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub accuracy: f64,
    pub over_reliance: f64,
    pub under_reliance: f64,
}

/// Expected metrics given the AI accuracy `ai_accuracy` on served
/// instances. `shows_prediction` is false for the features-only condition.
pub fn expected_metrics(behavior: &BehaviorModel, ai_accuracy: f64, shows_prediction: bool) -> Expectation {
    let p = if shows_prediction { behavior.adoption_prob } else { 0.0 };
    let (a, b) = (ai_accuracy, behavior.base_accuracy);
    Expectation {
        accuracy: p * a + (1.0 - p) * b,
        over_reliance: p * (1.0 - a) + (1.0 - p) * (1.0 - a) * (1.0 - b),
        under_reliance: (1.0 - p) * a * (1.0 - b),
    }
}
