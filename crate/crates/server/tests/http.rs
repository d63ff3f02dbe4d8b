use std::collections::BTreeMap;
use std::sync::Arc;

use xaistudy::simulate::{run_simulated_study, BehaviorModel, Knowledge, SimulationOptions};
use xaistudy::study::fixture::write_synthetic_study;
use xaistudy::study::{
    AttentionAnswers, AttentionBank, AttentionOutcome, Condition, DecisionSubmission, ErrorKind, Phase, ResponseSet,
    StudyApi, StudyService, SurveySubmission,
};
use xaistudy::ManualClock;
use xaistudy_server::{spawn_server, ExportFormat, HttpClient, ServerHandle};

fn start() -> (ServerHandle, HttpClient, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::epoch());
    let service = Arc::new(StudyService::in_memory(clock.clone()));
    let server = spawn_server(service, "127.0.0.1:0".parse().unwrap()).unwrap();
    let client = HttpClient::new(server.url());
    (server, client, clock)
}

fn raw_post(url: &str, body: &str) -> (u16, serde_json::Value) {
    let resp = reqwest::blocking::Client::new()
        .post(url)
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap_or(serde_json::Value::Null))
}

#[test]
fn participant_flow_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client, clock) = start();
    let config = write_synthetic_study(dir.path(), Condition::FpeIg, 4, clock.as_ref()).unwrap();
    let created = client.create_study(config.clone()).unwrap();
    assert_eq!(created.condition, Condition::FpeIg);
    assert_eq!(client.create_study(config).unwrap_err().kind, ErrorKind::Conflict);

    let info = client.study_info(&created.study_id).unwrap();
    assert_eq!(info.survey_questions.len(), 16);
    let session = client.open_session(&created.study_id, "p1").unwrap();
    let dup = client.open_session(&created.study_id, "p1").unwrap_err();
    assert_eq!(dup.kind, ErrorKind::Conflict);
    assert_eq!(dup.session_id.as_deref(), Some(session.session_id.as_str()));
    assert_eq!(client.find_session(&created.study_id, "p1").unwrap(), session);

    let sid = session.session_id.clone();
    assert_eq!(client.next_task(&sid).unwrap_err().kind, ErrorKind::WrongPhase);
    assert_eq!(client.consent(&sid, false).unwrap_err().kind, ErrorKind::Validation);
    assert_eq!(client.consent(&sid, true).unwrap().phase, Phase::Instructions);
    let key = AttentionBank::bundled().answer_key(Condition::FpeIg);
    assert_eq!(
        client.attention_check(&sid, &AttentionAnswers { answers: key }).unwrap(),
        AttentionOutcome::Pass
    );
    for i in 0..info.tasks_per_participant {
        let task = client.next_task(&sid).unwrap();
        assert_eq!(task.task_index, i);
        let bars = task.attributions.as_ref().unwrap();
        assert!(bars.windows(2).all(|w| w[0].score.abs() >= w[1].score.abs()));
        clock.advance_ms(4_000);
        let ack = client
            .submit_decision(
                &sid,
                &DecisionSubmission {
                    instance_id: task.instance_id,
                    human_decision: (i % 2) as u8,
                    client_dwell_ms: Some(1),
                },
            )
            .unwrap();
        assert_eq!(ack.elapsed_ms, 4_000);
    }
    let answers: BTreeMap<String, u8> = (1..=16).map(|i| (format!("Q{i}"), 2)).collect();
    let done = client
        .submit_survey(
            &sid,
            &SurveySubmission {
                answers,
                demographics: BTreeMap::from([("age".to_string(), "30-39".to_string())]),
            },
        )
        .unwrap();
    assert_eq!(done.phase, Phase::Done);

    let export = client.export(&created.study_id).unwrap();
    assert_eq!(export.decisions.len(), 20);
    assert!(export.decisions.iter().all(|d| d.elapsed_ms == 4_000));
    let csv = client.export_text(&created.study_id, ExportFormat::DecisionsCsv).unwrap();
    let rows = ResponseSet::read_decisions_csv(csv.as_bytes()).unwrap();
    assert_eq!(rows, export.decisions);
    let surveys = client.export_text(&created.study_id, ExportFormat::SurveysCsv).unwrap();
    assert_eq!(ResponseSet::read_surveys_csv(surveys.as_bytes()).unwrap(), export.surveys);
    server.stop().unwrap();
}

#[test]
fn errors_have_statuses_and_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let (server, client, clock) = start();
    let base = server.url();
    let config = write_synthetic_study(dir.path(), Condition::Fp, 1, clock.as_ref()).unwrap();
    let study = client.create_study(config).unwrap().study_id;

    let (status, body) = raw_post(&format!("{base}/studies/{study}/sessions"), "{not json");
    assert_eq!(status, 422);
    assert_eq!(body["error"], "validation");

    let (status, body) = raw_post(&format!("{base}/sessions/se-missing/consent"), r#"{"agree":true}"#);
    assert_eq!(status, 404);
    assert_eq!(body["error"], "not_found");

    let (status, _) = raw_post(&format!("{base}/studies/{study}/sessions"), r#"{"participant_id":"x"}"#);
    assert_eq!(status, 201);
    let (status, body) = raw_post(&format!("{base}/studies/{study}/sessions"), r#"{"participant_id":"x"}"#);
    assert_eq!(status, 409);
    assert_eq!(body["error"], "conflict");
    assert!(body["session_id"].as_str().unwrap().starts_with("se-"));

    let sid = body["session_id"].as_str().unwrap();
    let (status, body) = raw_post(&format!("{base}/sessions/{sid}/next-task"), "");
    assert_eq!((status, body["error"].as_str()), (409, Some("wrong_phase")));

    let mut bad = dir.path().join("nope.csv").display().to_string();
    bad = serde_json::json!({
        "dataset_name": "x", "data": bad, "codebook": "c.json", "checkpoint": "m.json", "condition": "FP"
    })
    .to_string();
    let (status, body) = raw_post(&format!("{base}/studies"), &bad);
    assert_eq!((status, body["error"].as_str()), (422, Some("precondition")));

    let resp = reqwest::blocking::get(format!("{base}/nowhere")).unwrap();
    assert_eq!(resp.status().as_u16(), 404);
}

#[test]
fn disqualified_participants_leave_no_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let (_server, client, clock) = start();
    let config = write_synthetic_study(dir.path(), Condition::F, 2, clock.as_ref()).unwrap();
    let study = client.create_study(config.clone()).unwrap().study_id;
    let dataset = xaistudy::data::load_dataset(&config.data, &config.codebook).unwrap();
    let knowledge = Knowledge::from_dataset(&dataset, AttentionBank::bundled());
    let mut behavior = BehaviorModel::new(0.7, 0.0, 3);
    behavior.attention_accuracy = 0.0;
    let export = run_simulated_study(
        &client,
        &study,
        &behavior,
        &knowledge,
        clock.as_ref(),
        SimulationOptions::sequential(5),
    )
    .unwrap();
    assert!(export.decisions.is_empty());
    assert_eq!(export.exclusions.len(), 5);
}

#[test]
fn concurrent_participants_stay_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (_server, client, clock) = start();
    let config = write_synthetic_study(dir.path(), Condition::Fp, 6, clock.as_ref()).unwrap();
    let study = client.create_study(config.clone()).unwrap().study_id;
    let dataset = xaistudy::data::load_dataset(&config.data, &config.codebook).unwrap();
    let knowledge = Knowledge::from_dataset(&dataset, AttentionBank::bundled());
    let export = run_simulated_study(
        &client,
        &study,
        &BehaviorModel::new(0.7, 0.5, 9),
        &knowledge,
        &xaistudy::simulate::NoPacer,
        SimulationOptions {
            participants: 12,
            first_index: 0,
            threads: 4,
        },
    )
    .unwrap();
    assert_eq!(export.decisions.len(), 12 * 20);
    assert_eq!(export.surveys.len(), 12);
    let mut per_session: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for d in &export.decisions {
        per_session.entry(&d.session_id).or_default().push(d.task_index);
    }
    assert_eq!(per_session.len(), 12);
    for idx in per_session.values() {
        assert_eq!(idx, &(0..20).collect::<Vec<_>>());
    }
}
