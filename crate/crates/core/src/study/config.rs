use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttentionBank, Condition, SurveyBank};
use crate::data::{load_dataset, Dataset, DEFAULT_TEST_FRACTION};
use crate::explain::{ExplainerConfig, ExplanationSet, Method};
use crate::model::{Checkpoint, ModelSpec};

pub const DEFAULT_POOL_SIZE: usize = 200;
pub const DEFAULT_TASKS: usize = 20;
pub const DEFAULT_TARGET_PARTICIPANTS: usize = 30;

pub const DEFAULT_CONSENT: &str = "You are invited to take part in a research study on decision making \
with the help of an AI system. Participation is voluntary and you may stop at any time. \
Your answers are stored under an anonymous participant id.";

fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}

fn default_tasks() -> usize {
    DEFAULT_TASKS
}

fn default_target() -> usize {
    DEFAULT_TARGET_PARTICIPANTS
}

/// Body of create-study. Paths are resolved by the server process.
///
/// The data file must carry a `split` column so the pool is drawn from the
/// same test split the model was evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Derived from the other fields when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study_id: Option<String>,
    pub dataset_name: String,
    pub data: PathBuf,
    pub codebook: PathBuf,
    pub checkpoint: PathBuf,
    /// Precomputed explanations, required for FPE conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanations: Option<PathBuf>,
    pub condition: Condition,
    #[serde(default)]
    pub pool_seed: u64,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_tasks")]
    pub tasks_per_participant: usize,
    /// Bundled bank when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_check_bank: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey_bank: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_text: Option<PathBuf>,
    #[serde(default = "default_target")]
    pub target_participants: usize,
}

/// Loaded inputs of a study.
#[derive(Debug, Clone)]
pub struct StudyAssets {
    pub dataset: Dataset,
    pub checkpoint: Checkpoint,
    pub explanations: Option<ExplanationSet>,
    pub survey_bank: SurveyBank,
    pub attention_bank: AttentionBank,
    pub consent_text: String,
}

impl StudyAssets {
    pub fn load(config: &StudyConfig) -> Result<Self, String> {
        let dataset = load_dataset(&config.data, &config.codebook).map_err(|e| e.to_string())?;
        let checkpoint = Checkpoint::load(&config.checkpoint, &dataset.codebook).map_err(|e| e.to_string())?;
        let explanations = match &config.explanations {
            Some(p) => Some(ExplanationSet::load(p).map_err(|e| format!("{}: {e}", p.display()))?),
            None => None,
        };
        let survey_bank = match &config.survey_bank {
            Some(p) => SurveyBank::from_path(p)?,
            None => SurveyBank::bundled(),
        };
        let attention_bank = match &config.attention_check_bank {
            Some(p) => AttentionBank::from_path(p)?,
            None => AttentionBank::bundled(),
        };
        let consent_text = match &config.consent_text {
            Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => DEFAULT_CONSENT.to_string(),
        };
        Ok(Self {
            dataset,
            checkpoint,
            explanations,
            survey_bank,
            attention_bank,
            consent_text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    pub data: PathBuf,
    pub codebook: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub condition: Condition,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_tasks")]
    pub tasks_per_participant: usize,
    #[serde(default = "default_target")]
    pub target_participants: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanksSection {
    pub attention_checks: Option<PathBuf>,
    pub survey: Option<PathBuf>,
    pub consent: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    #[serde(default)]
    pub split: u64,
    #[serde(default)]
    pub model: u64,
    #[serde(default)]
    pub explainer: u64,
    #[serde(default)]
    pub pool: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreSection {
    #[default]
    Memory,
    File {
        path: PathBuf,
    },
}

/// Explainer overrides; unset fields take data-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainerSection {
    pub sg_sigma: Option<f64>,
    pub sg_samples: Option<usize>,
    pub ig_steps: Option<usize>,
    pub ig_split_kinks: Option<bool>,
    pub lime_samples: Option<usize>,
    pub lime_kernel_width: Option<f64>,
    pub lime_ridge: Option<f64>,
    pub shap_coalition_samples: Option<usize>,
}

impl ExplainerSection {
    /// Applies the overrides on top of `base`.
    pub fn apply(&self, mut base: ExplainerConfig) -> ExplainerConfig {
        if let Some(v) = self.sg_sigma {
            base.sg_sigma = v;
        }
        if let Some(v) = self.sg_samples {
            base.sg_samples = v;
        }
        if let Some(v) = self.ig_steps {
            base.ig_steps = v;
        }
        if let Some(v) = self.ig_split_kinks {
            base.ig_split_kinks = v;
        }
        if let Some(v) = self.lime_samples {
            base.lime_samples = v;
        }
        if self.lime_kernel_width.is_some() {
            base.lime_kernel_width = self.lime_kernel_width;
        }
        if let Some(v) = self.lime_ridge {
            base.lime_ridge = v;
        }
        if self.shap_coalition_samples.is_some() {
            base.shap_coalition_samples = self.shap_coalition_samples;
        }
        base
    }
}

/// The researcher-facing configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainConfig {
    pub dataset: DatasetSection,
    pub model: ModelSpec,
    #[serde(default)]
    pub explainer: ExplainerSection,
    pub study: StudySection,
    #[serde(default)]
    pub banks: BanksSection,
    #[serde(default)]
    pub seeds: SeedsSection,
    #[serde(default)]
    pub store: StoreSection,
}

impl MainConfig {
    /// Reads the file and resolves relative paths against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: MainConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset.data);
        fix(&mut cfg.dataset.codebook);
        for p in [&mut cfg.banks.attention_checks, &mut cfg.banks.survey, &mut cfg.banks.consent]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let StoreSection::File { path } = &mut cfg.store {
            fix(path);
        }
        Ok(cfg)
    }

    pub fn explainer_method(&self) -> Option<Method> {
        self.study.condition.method()
    }

    /// The create-study body for artifacts written to `out_dir`.
    pub fn study_config(&self, split_data: PathBuf, checkpoint: PathBuf, explanations: Option<PathBuf>) -> StudyConfig {
        StudyConfig {
            study_id: None,
            dataset_name: self.dataset.name.clone(),
            data: split_data,
            codebook: self.dataset.codebook.clone(),
            checkpoint,
            explanations,
            condition: self.study.condition,
            pool_seed: self.seeds.pool,
            pool_size: self.study.pool_size,
            tasks_per_participant: self.study.tasks_per_participant,
            attention_check_bank: self.banks.attention_checks.clone(),
            survey_bank: self.banks.survey.clone(),
            consent_text: self.banks.consent.clone(),
            target_participants: self.study.target_participants,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[dataset]
name = "synthetic"
data = "data.csv"
codebook = "codebook.json"

[model]
family = "neural"
hidden_sizes = [16]
epochs = 100
learning_rate = 0.1

[explainer]
sg_samples = 20

[study]
condition = "FPE-SHAP"

[seeds]
pool = 7

[store]
kind = "file"
path = "store"
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.toml");
        std::fs::write(&path, EXAMPLE).unwrap();
        let cfg = MainConfig::from_path(&path).unwrap();
        assert_eq!(cfg.dataset.data, dir.path().join("data.csv"));
        assert_eq!(cfg.study.pool_size, 200);
        assert_eq!(cfg.study.tasks_per_participant, 20);
        assert_eq!(cfg.explainer_method(), Some(Method::KernelShap));
        assert_eq!(cfg.store, StoreSection::File { path: dir.path().join("store") });
        let e = cfg.explainer.apply(ExplainerConfig::new(Method::Smoothgrad));
        assert_eq!(e.sg_samples, 20);
        let sc = cfg.study_config("d.csv".into(), "m.json".into(), None);
        assert_eq!(sc.pool_seed, 7);
    }

    #[test]
    fn study_config_defaults() {
        let sc: StudyConfig = serde_json::from_str(
            r#"{"dataset_name":"x","data":"d","codebook":"c","checkpoint":"m","condition":"F"}"#,
        )
        .unwrap();
        assert_eq!((sc.pool_size, sc.tasks_per_participant, sc.target_participants), (200, 20, 30));
    }
}
