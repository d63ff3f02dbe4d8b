//! Ready-made synthetic studies for demos and tests.

use std::path::Path;
use std::sync::Arc;

use super::{AttentionBank, Condition, StudyAssets, StudyConfig, SurveyBank, DEFAULT_CONSENT};
use crate::clock::Clock;
use crate::data::{generate_synthetic, sample_study_pool, split_dataset, Dataset, Encoder, Split, SyntheticSpec};
use crate::explain::{precompute_pool, ExplainerConfig};
use crate::model::{train_model, Checkpoint, ModelSpec};

/// Size of the synthetic dataset; its 20% test split holds 300 instances.
pub const SYNTHETIC_ROWS: usize = 1500;

/// Splits, trains a logistic model and, for FPE conditions, precomputes
/// explanations for the pool the study will draw.
pub fn synthetic_assets(condition: Condition, seed: u64, clock: &dyn Clock) -> (StudyConfig, StudyAssets) {
    let spec = SyntheticSpec::new(SYNTHETIC_ROWS, 3, 1, vec![1.2, -0.8, 0.5, 0.9], seed);
    let dataset = generate_synthetic(&spec).expect("synthetic spec is valid");
    let dataset = split_dataset(&dataset, 0.2, seed).expect("enough rows to split");
    let encoder = Encoder::fit(&dataset).expect("train split exists");
    let mut model_spec = ModelSpec::logistic();
    model_spec.epochs = 200;
    let model = train_model(&dataset, &encoder, &model_spec).expect("synthetic data trains");
    let config = StudyConfig {
        study_id: None,
        dataset_name: dataset.codebook.dataset_name.clone(),
        data: "data.csv".into(),
        codebook: "codebook.json".into(),
        checkpoint: "model.json".into(),
        explanations: condition.method().map(|_| "explanations.jsonl".into()),
        condition,
        pool_seed: seed,
        pool_size: 200,
        tasks_per_participant: 20,
        attention_check_bank: None,
        survey_bank: None,
        consent_text: None,
        target_participants: 30,
    };
    let explanations = condition.method().map(|method| {
        let encoder = Arc::new(encoder.clone());
        let train_rows = train_rows(&dataset, &encoder);
        let explainer = ExplainerConfig::with_training_defaults(method, &train_rows, seed);
        let pool = sample_study_pool(&dataset, config.pool_size, config.pool_seed).expect("pool fits");
        precompute_pool(&model, &encoder, &pool, &explainer, clock)
    });
    let checkpoint = Checkpoint::new(&dataset.codebook, encoder, model);
    let assets = StudyAssets {
        dataset,
        checkpoint,
        explanations,
        survey_bank: SurveyBank::bundled(),
        attention_bank: AttentionBank::bundled(),
        consent_text: DEFAULT_CONSENT.to_string(),
    };
    (config, assets)
}

/// Encoded training rows, in dataset order.
pub fn train_rows(dataset: &Dataset, encoder: &Encoder) -> Vec<Vec<f64>> {
    dataset
        .part(Split::Train)
        .expect("dataset is split")
        .into_iter()
        .map(|i| encoder.encode_values(i).expect("training rows encode"))
        .collect()
}

/// Writes the synthetic study's files into `dir` and returns a config whose
/// paths point at them.
pub fn write_synthetic_study(dir: &Path, condition: Condition, seed: u64, clock: &dyn Clock) -> std::io::Result<StudyConfig> {
    let (mut config, assets) = synthetic_assets(condition, seed, clock);
    let io = |e: String| std::io::Error::other(e);
    config.data = dir.join("data.csv");
    config.codebook = dir.join("codebook.json");
    config.checkpoint = dir.join("model.json");
    assets.dataset.write_csv_path(&config.data).map_err(|e| io(e.to_string()))?;
    std::fs::write(&config.codebook, assets.dataset.codebook.to_json())?;
    assets.checkpoint.save(&config.checkpoint).map_err(|e| io(e.to_string()))?;
    if let Some(set) = &assets.explanations {
        let path = dir.join(format!("explanations-{}.jsonl", condition.as_str().to_lowercase()));
        set.upsert_into(&path)?;
        config.explanations = Some(path);
    }
    Ok(config)
}
