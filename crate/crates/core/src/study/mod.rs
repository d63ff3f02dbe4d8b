//! The participant flow: consent, instructions with an attention check,
//! decision tasks and an exit survey.
//!
//! [`StudyService`] implements [`StudyApi`] over a [`DocumentStore`]. Task
//! timing is measured on the server with an injected [`crate::Clock`].

mod api;
mod bank;
mod condition;
mod config;
mod export;
pub mod fixture;
mod service;
mod store;
mod types;

pub use api::{ApiError, ErrorKind, StudyApi};
pub use bank::{AttentionBank, AttentionItem, AttentionPrompt, SurveyBank, SurveyQuestion};
pub use condition::{Condition, ConditionClass, UnknownCondition};
pub use config::{
    BanksSection, DatasetSection, ExplainerSection, MainConfig, SeedsSection, StoreSection, StudyAssets,
    StudyConfig, StudySection, DEFAULT_CONSENT, DEFAULT_POOL_SIZE, DEFAULT_TARGET_PARTICIPANTS, DEFAULT_TASKS,
};
pub use export::{DecisionRow, Exclusion, ExportError, ExportPaths, ResponseSet, SurveyRow};
pub use service::{RoundRobin, StudyService};
pub use store::{DocumentStore, FileStore, MemoryStore, StoreError};
pub use types::*;

#[cfg(test)]
pub(crate) use export::tests as tests_support;

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};
    use std::sync::Arc;

    use super::*;
    use crate::clock::ManualClock;

    fn service(condition: Condition) -> (StudyService, Arc<ManualClock>, String) {
        let clock = Arc::new(ManualClock::epoch());
        let (config, assets) = fixture::synthetic_assets(condition, 11, clock.as_ref());
        let svc = StudyService::in_memory(clock.clone());
        let id = svc.create_study_with(config, assets).unwrap().study_id;
        (svc, clock, id)
    }

    fn pass_attention(svc: &StudyService, study: &str, session: &Session) {
        let key = svc.study(study).unwrap().attention_bank.answer_key(session.condition);
        svc.consent(&session.session_id, true).unwrap();
        let outcome = svc
            .attention_check(&session.session_id, &AttentionAnswers { answers: key })
            .unwrap();
        assert_eq!(outcome, AttentionOutcome::Pass);
    }

    #[test]
    fn full_session_and_timing() {
        let (svc, clock, study) = service(Condition::FpeShap);
        let s = svc.open_session(&study, "p1").unwrap();
        assert_eq!(s.phase, Phase::Consent);
        assert_eq!(s.task_list.len(), 20);
        pass_attention(&svc, &study, &s);
        for i in 0..20 {
            let p = svc.next_task(&s.session_id).unwrap();
            assert_eq!(p.task_index, i);
            clock.advance_ms(5000);
            let ack = svc
                .submit_decision(
                    &s.session_id,
                    &DecisionSubmission {
                        instance_id: p.instance_id.clone(),
                        human_decision: 1,
                        client_dwell_ms: None,
                    },
                )
                .unwrap();
            assert_eq!(ack.elapsed_ms, 5000);
        }
        assert_eq!(svc.get_session(&s.session_id).unwrap().phase, Phase::Survey);
        let answers: BTreeMap<String, u8> = (1..=16).map(|i| (format!("Q{i}"), 3)).collect();
        let done = svc
            .submit_survey(
                &s.session_id,
                &SurveySubmission {
                    answers,
                    demographics: BTreeMap::new(),
                },
            )
            .unwrap();
        assert_eq!(done.phase, Phase::Done);
        let export = svc.export(&study).unwrap();
        assert_eq!(export.decisions.len(), 20);
        assert_eq!(export.surveys.len(), 1);
        let ids: BTreeSet<_> = export.decisions.iter().map(|d| &d.instance_id).collect();
        assert_eq!(ids.len(), 20);
        assert!(export.decisions.iter().all(|d| d.protected.contains_key("group")));
        assert_eq!(export, svc.export(&study).unwrap());
    }

    #[test]
    fn payload_content_follows_condition() {
        for condition in Condition::ALL {
            let (svc, _, study) = service(condition);
            let s = svc.open_session(&study, "p").unwrap();
            pass_attention(&svc, &study, &s);
            let p = svc.next_task(&s.session_id).unwrap();
            assert_eq!(p.ai_prediction.is_some(), condition != Condition::F, "{condition}");
            assert_eq!(p.attributions.is_some(), condition.method().is_some(), "{condition}");
            assert_eq!(p.chart_caption.is_some(), condition.method().is_some());
            if let Some(a) = &p.attributions {
                assert!(a.windows(2).all(|w| w[0].score.abs() >= w[1].score.abs()));
            }
            let order: Vec<_> = p.features.iter().map(|f| f.feature.clone()).collect();
            assert_eq!(order, svc.study(&study).unwrap().codebook.display_order);
        }
    }

    #[test]
    fn duplicate_participant_returns_existing_session() {
        let (svc, _, study) = service(Condition::F);
        let s = svc.open_session(&study, "dup").unwrap();
        let e = svc.open_session(&study, "dup").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Conflict);
        assert_eq!(e.session_id.as_deref(), Some(s.session_id.as_str()));
        assert_eq!(svc.find_session(&study, "dup").unwrap(), s);
        let other = svc.open_session(&study, "other").unwrap();
        assert_ne!(other.task_list, s.task_list);
    }

    #[test]
    fn attention_failure_is_terminal() {
        let (svc, _, study) = service(Condition::Fp);
        let s = svc.open_session(&study, "p").unwrap();
        assert_eq!(svc.next_task(&s.session_id).unwrap_err().kind, ErrorKind::WrongPhase);
        svc.consent(&s.session_id, true).unwrap();
        let mut key = svc.study(&study).unwrap().attention_bank.answer_key(Condition::Fp);
        let first = key.keys().next().unwrap().clone();
        key.insert(first, false);
        let answers = AttentionAnswers { answers: key };
        assert_eq!(
            svc.attention_check(&s.session_id, &answers).unwrap(),
            AttentionOutcome::Disqualified
        );
        assert_eq!(svc.next_task(&s.session_id).unwrap_err().kind, ErrorKind::WrongPhase);
        assert_eq!(
            svc.attention_check(&s.session_id, &answers).unwrap_err().kind,
            ErrorKind::WrongPhase
        );
        let export = svc.export(&study).unwrap();
        assert_eq!(export.exclusions.len(), 1);
        assert_eq!(export.exclusions[0].phase, Phase::Disqualified);
    }

    #[test]
    fn out_of_order_and_duplicate_submissions() {
        let (svc, clock, study) = service(Condition::Fp);
        let s = svc.open_session(&study, "p").unwrap();
        pass_attention(&svc, &study, &s);
        let p = svc.next_task(&s.session_id).unwrap();
        let wrong = DecisionSubmission {
            instance_id: s.task_list[1].clone(),
            human_decision: 0,
            client_dwell_ms: None,
        };
        assert_eq!(svc.submit_decision(&s.session_id, &wrong).unwrap_err().kind, ErrorKind::OutOfOrder);
        assert_eq!(svc.get_session(&s.session_id).unwrap().task_cursor, 0);
        let right = DecisionSubmission {
            instance_id: p.instance_id.clone(),
            human_decision: 0,
            client_dwell_ms: Some(10),
        };
        clock.advance_ms(100);
        svc.submit_decision(&s.session_id, &right).unwrap();
        assert_eq!(svc.submit_decision(&s.session_id, &right).unwrap_err().kind, ErrorKind::Conflict);
    }

    #[test]
    fn reserving_a_task_restarts_its_timer() {
        let (svc, clock, study) = service(Condition::F);
        let s = svc.open_session(&study, "p").unwrap();
        pass_attention(&svc, &study, &s);
        let p = svc.next_task(&s.session_id).unwrap();
        clock.advance_ms(60_000);
        let again = svc.next_task(&s.session_id).unwrap();
        assert_eq!(again.instance_id, p.instance_id);
        clock.advance_ms(3_000);
        let ack = svc
            .submit_decision(
                &s.session_id,
                &DecisionSubmission {
                    instance_id: p.instance_id,
                    human_decision: 1,
                    client_dwell_ms: None,
                },
            )
            .unwrap();
        assert_eq!(ack.elapsed_ms, 3_000);
    }

    #[test]
    fn survey_visibility_is_enforced() {
        let (svc, _, study) = service(Condition::Fp);
        let s = svc.open_session(&study, "p").unwrap();
        pass_attention(&svc, &study, &s);
        for _ in 0..20 {
            let p = svc.next_task(&s.session_id).unwrap();
            svc.submit_decision(
                &s.session_id,
                &DecisionSubmission {
                    instance_id: p.instance_id,
                    human_decision: 1,
                    client_dwell_ms: None,
                },
            )
            .unwrap();
        }
        let all: BTreeMap<String, u8> = (1..=16).map(|i| (format!("Q{i}"), 4)).collect();
        let submit = |answers: BTreeMap<String, u8>| {
            svc.submit_survey(
                &s.session_id,
                &SurveySubmission {
                    answers,
                    demographics: BTreeMap::new(),
                },
            )
        };
        assert_eq!(submit(all.clone()).unwrap_err().kind, ErrorKind::Validation);
        let mut visible = all.clone();
        for q in ["Q4", "Q10", "Q11", "Q12", "Q13"] {
            visible.remove(q);
        }
        let mut out_of_range = visible.clone();
        out_of_range.insert("Q1".into(), 6);
        assert_eq!(submit(out_of_range).unwrap_err().kind, ErrorKind::Validation);
        assert_eq!(submit(visible).unwrap().phase, Phase::Done);
    }

    #[test]
    fn fpe_needs_matching_explanations() {
        let clock = ManualClock::epoch();
        let (config, mut assets) = fixture::synthetic_assets(Condition::FpeLime, 2, &clock);
        let svc = StudyService::in_memory(Arc::new(ManualClock::epoch()));
        let mut missing = assets.clone();
        missing.explanations = None;
        assert_eq!(
            svc.create_study_with(config.clone(), missing).unwrap_err().kind,
            ErrorKind::Precondition
        );
        for r in &mut assets.explanations.as_mut().unwrap().records {
            r.model_fingerprint = "other".into();
        }
        let e = svc.create_study_with(config, assets).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Precondition);
        assert!(e.message.contains("model"));
    }

    #[test]
    fn crash_between_response_and_session_write_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::epoch());
        let (config, assets) = fixture::synthetic_assets(Condition::Fp, 5, clock.as_ref());
        let store: Arc<dyn DocumentStore> = Arc::new(FileStore::open(dir.path()).unwrap());
        let svc = StudyService::new(store.clone(), clock.clone());
        let study = svc.create_study_with(config, assets).unwrap().study_id;
        let s = svc.open_session(&study, "p").unwrap();
        pass_attention(&svc, &study, &s);
        let p = svc.next_task(&s.session_id).unwrap();
        // Simulate the response write landing without the session update.
        let before = store.get("sessions", &s.session_id).unwrap().unwrap();
        svc.submit_decision(
            &s.session_id,
            &DecisionSubmission {
                instance_id: p.instance_id,
                human_decision: 1,
                client_dwell_ms: None,
            },
        )
        .unwrap();
        store.put("sessions", &s.session_id, &before).unwrap();

        let restarted = StudyService::new(Arc::new(FileStore::open(dir.path()).unwrap()), clock);
        let s2 = restarted.get_session(&s.session_id).unwrap();
        assert_eq!(s2.task_cursor, 1);
        assert_eq!(restarted.next_task(&s.session_id).unwrap().task_index, 1);
    }

    #[test]
    fn round_robin_cycles() {
        let rr = RoundRobin::new(vec!["a".into(), "b".into()]);
        assert_eq!([rr.assign(), rr.assign(), rr.assign()], ["a", "b", "a"]);
    }
}
