use serde::{Deserialize, Serialize};

use super::{ModelError, TrainedModel};
use crate::data::{Dataset, Encoder, Split};
use crate::evaluation::{fairness_from_labels, Confusion};

/// Test-split quality of the AI predictions alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the codebook declares no protected attribute or a group
    /// lacks support.
    pub aaod: Option<f64>,
    pub eod: Option<f64>,
    pub protected_attribute: Option<String>,
    pub n_test: usize,
}

/// Scores the model on the whole test split. Fairness uses the first
/// protected attribute in the codebook.
pub fn evaluate_model(model: &TrainedModel, dataset: &Dataset, encoder: &Encoder) -> Result<ModelMetrics, ModelError> {
    let test = dataset.part(Split::Test)?;
    let mut outcomes = Vec::with_capacity(test.len());
    for inst in &test {
        let x = encoder.encode_values(inst)?;
        outcomes.push((model.predict_values(&x)?.label, inst.label));
    }
    let confusion = Confusion::from_pairs(outcomes.iter().copied());
    let (aaod, eod, protected_attribute) = match dataset.codebook.protected_attributes.first() {
        Some(pa) => {
            let labelled: Vec<_> = test
                .iter()
                .zip(&outcomes)
                .filter_map(|(inst, &(pred, truth))| {
                    let group = dataset.codebook.group_of(pa, inst.values.get(&pa.feature)?)?;
                    Some((pred, truth, group))
                })
                .collect();
            let fair = fairness_from_labels(&labelled);
            (fair.aaod, fair.eod, Some(pa.feature.clone()))
        }
        None => (None, None, None),
    };
    Ok(ModelMetrics {
        accuracy: confusion.accuracy(),
        f1: confusion.f1().0,
        aaod,
        eod,
        protected_attribute,
        n_test: test.len(),
    })
}
