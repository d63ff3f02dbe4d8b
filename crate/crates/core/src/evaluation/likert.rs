use serde::{Deserialize, Serialize};

use super::metrics::sample_sd;
use super::EvalError;
use crate::study::{Condition, SurveyBank, SurveyRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertSummary {
    pub question: String,
    pub condition: Condition,
    pub mean: f64,
    /// Sample standard deviation (n - 1).
    pub sd: f64,
    pub n: usize,
}

/// Mean and standard deviation of one question's answers in `condition`.
pub fn aggregate_likert(
    surveys: &[SurveyRow],
    question: &str,
    condition: Condition,
    bank: &SurveyBank,
) -> Result<LikertSummary, EvalError> {
    if !bank.is_visible(question, condition) {
        return Err(EvalError::NotVisible {
            question: question.to_string(),
            condition,
        });
    }
    let max = bank.max_score();
    let mut values = Vec::new();
    for s in surveys.iter().filter(|s| s.condition == condition) {
        if let Some(&v) = s.answers.get(question) {
            if !(1..=max).contains(&v) {
                return Err(EvalError::InvalidAnswer {
                    question: question.to_string(),
                    value: v,
                });
            }
            values.push(f64::from(v));
        }
    }
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(LikertSummary {
        question: question.to_string(),
        condition,
        mean,
        sd: sample_sd(&values),
        n: values.len(),
    })
}
