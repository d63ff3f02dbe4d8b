//! From a main configuration file to the artifacts a study server needs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::data::{load_dataset, sample_study_pool, split_dataset, Encoder};
use crate::explain::{precompute_pool, ExplainerConfig};
use crate::model::{evaluate_model, train_model, Checkpoint, ModelMetrics};
use crate::study::fixture::train_rows;
use crate::study::{MainConfig, StudyConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub study_config: StudyConfig,
    pub study_config_path: PathBuf,
    pub metrics: ModelMetrics,
    pub explained: usize,
    /// Instances whose explanation failed, with the error.
    pub failures: Vec<(String, String)>,
}

/// Splits the data (unless it already carries a split), trains the model,
/// precomputes explanations for FPE conditions and writes everything plus
/// `study.json` into `out_dir`.
pub fn prepare(config: &MainConfig, out_dir: &Path, clock: &dyn Clock) -> Result<Prepared, String> {
    std::fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let raw = load_dataset(&config.dataset.data, &config.dataset.codebook).map_err(|e| e.to_string())?;
    let dataset = if raw.split.is_some() {
        raw
    } else {
        split_dataset(&raw, config.dataset.test_fraction, config.seeds.split).map_err(|e| e.to_string())?
    };
    let data_path = out_dir.join("data.csv");
    dataset.write_csv_path(&data_path).map_err(|e| e.to_string())?;

    let encoder = Encoder::fit(&dataset).map_err(|e| e.to_string())?;
    let mut spec = config.model.clone();
    spec.seed = config.seeds.model;
    let model = train_model(&dataset, &encoder, &spec).map_err(|e| e.to_string())?;
    let metrics = evaluate_model(&model, &dataset, &encoder).map_err(|e| e.to_string())?;

    let mut explained = 0;
    let mut failures = Vec::new();
    let explanations = match config.explainer_method() {
        Some(method) => {
            let encoder = Arc::new(encoder.clone());
            let rows = train_rows(&dataset, &encoder);
            let explainer = config
                .explainer
                .apply(ExplainerConfig::with_training_defaults(method, &rows, config.seeds.explainer));
            let pool = sample_study_pool(&dataset, config.study.pool_size, config.seeds.pool)
                .map_err(|e| e.to_string())?;
            let set = precompute_pool(&model, &encoder, &pool, &explainer, clock);
            explained = set.records.len();
            failures = set
                .failures
                .iter()
                .map(|f| (f.instance_id.clone(), f.error.clone()))
                .collect();
            let path = out_dir.join("explanations.jsonl");
            let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            set.write_jsonl(std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
            Some(path)
        }
        None => None,
    };
    let checkpoint_path = out_dir.join("model.json");
    Checkpoint::new(&dataset.codebook, encoder, model)
        .save(&checkpoint_path)
        .map_err(|e| e.to_string())?;

    let study_config = config.study_config(data_path, checkpoint_path, explanations);
    let study_config_path = out_dir.join("study.json");
    let json = serde_json::to_string_pretty(&study_config).expect("study configs serialize");
    std::fs::write(&study_config_path, json).map_err(|e| format!("{}: {e}", study_config_path.display()))?;
    Ok(Prepared {
        study_config,
        study_config_path,
        metrics,
        explained,
        failures,
    })
}
