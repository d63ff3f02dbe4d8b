use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use xaistudy::data::Codebook;
use xaistudy::simulate::{run_simulated_study, BehaviorModel, Knowledge, SimulationOptions};
use xaistudy::study::fixture::synthetic_assets;
use xaistudy::study::{Condition, MainConfig, Phase, ResponseSet, StudyService};
use xaistudy::ManualClock;

fn simulate(condition: Condition, seed: u64) -> (ResponseSet, Vec<u8>) {
    let clock = Arc::new(ManualClock::epoch());
    let (config, assets) = synthetic_assets(condition, seed, clock.as_ref());
    let knowledge = Knowledge::from_dataset(&assets.dataset, assets.attention_bank.clone());
    let svc = StudyService::in_memory(clock.clone());
    let study = svc.create_study_with(config, assets).unwrap().study_id;

    let behavior = BehaviorModel::new(0.65, 0.6, seed);
    let mut inattentive = behavior.clone();
    inattentive.attention_accuracy = 0.0;
    run_simulated_study(&svc, &study, &behavior, &knowledge, clock.as_ref(), SimulationOptions::sequential(30)).unwrap();
    let options = SimulationOptions {
        participants: 2,
        first_index: 30,
        threads: 1,
    };
    let export = run_simulated_study(&svc, &study, &inattentive, &knowledge, clock.as_ref(), options).unwrap();
    let mut csv = Vec::new();
    export.write_decisions_csv(&mut csv).unwrap();
    (export, csv)
}

#[test]
fn thirty_participants_and_two_exclusions() {
    let (export, csv) = simulate(Condition::FpeShap, 21);
    assert_eq!(export.decisions.len(), 600);
    assert_eq!(export.surveys.len(), 30);
    assert_eq!(export.exclusions.len(), 2);
    assert!(export.exclusions.iter().all(|e| e.phase == Phase::Disqualified));
    let sessions: BTreeSet<_> = export.decisions.iter().map(|d| &d.session_id).collect();
    assert_eq!(sessions.len(), 30);
    assert!(export.decisions.iter().all(|d| d.condition == Condition::FpeShap));
    assert!(export.decisions.iter().all(|d| d.ai_prediction.is_some()));
    assert_eq!(ResponseSet::read_decisions_csv(csv.as_slice()).unwrap(), export.decisions);
}

#[test]
fn exports_are_reproducible() {
    let (a, csv_a) = simulate(Condition::F, 4);
    let (b, csv_b) = simulate(Condition::F, 4);
    assert_eq!(a, b);
    assert_eq!(csv_a, csv_b);
    assert!(a.decisions.iter().all(|d| d.ai_prediction.is_none() && d.model_prediction.is_some()));
}

#[test]
fn german_credit_codebook_loads() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets/german_credit/codebook.json");
    let codebook = Codebook::from_path(&path).unwrap();
    assert_eq!(codebook.features.len(), 20);
    let sex = codebook.protected("sex").unwrap();
    assert_eq!((sex.minority.as_str(), sex.majority.as_str()), ("female", "male"));
    assert_eq!(codebook.label_name, "good_credit");
}

#[test]
fn shipped_configs_parse() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let main = MainConfig::from_path(root.join("german_credit.toml")).unwrap();
    assert_eq!(main.study.condition, Condition::FpeShap);
    assert!(main.dataset.codebook.ends_with("datasets/german_credit/codebook.json"));
    let behavior = BehaviorModel::from_path(root.join("behavior.toml")).unwrap();
    assert_eq!((behavior.base_accuracy, behavior.adoption_prob), (0.6, 0.5));
}
