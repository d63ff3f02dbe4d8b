use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Condition, ConditionClass};

const DEFAULT_SURVEY: &str = include_str!("../../banks/survey_questions.json");
const DEFAULT_ATTENTION: &str = include_str!("../../banks/attention_checks.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyQuestion {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub research_question: Option<String>,
    pub text: String,
    pub visible_in: BTreeSet<ConditionClass>,
}

/// Exit-survey Likert questions with per-condition visibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyBank {
    /// Answer labels; label `i` maps to score `i + 1`.
    pub scale: Vec<String>,
    pub questions: Vec<SurveyQuestion>,
}

impl SurveyBank {
    pub fn bundled() -> Self {
        serde_json::from_str(DEFAULT_SURVEY).expect("bundled survey bank parses")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        let bank: Self = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scale.len() < 2 {
            return Err("survey scale needs at least two labels".into());
        }
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(&q.id) {
                return Err(format!("duplicate question id `{}`", q.id));
            }
        }
        Ok(())
    }

    pub fn max_score(&self) -> u8 {
        self.scale.len() as u8
    }

    pub fn visible(&self, condition: Condition) -> Vec<&SurveyQuestion> {
        self.questions
            .iter()
            .filter(|q| q.visible_in.contains(&condition.class()))
            .collect()
    }

    pub fn visible_ids(&self, condition: Condition) -> BTreeSet<String> {
        self.visible(condition).into_iter().map(|q| q.id.clone()).collect()
    }

    pub fn is_visible(&self, question: &str, condition: Condition) -> bool {
        self.questions
            .iter()
            .any(|q| q.id == question && q.visible_in.contains(&condition.class()))
    }

    /// Position of a question in the bank, for ordering export columns.
    pub fn position(&self, question: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == question)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionItem {
    pub id: String,
    pub text: String,
    pub correct: bool,
    /// Overrides `correct` for some condition classes.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub correct_by_condition: BTreeMap<ConditionClass, bool>,
}

impl AttentionItem {
    pub fn correct_for(&self, condition: Condition) -> bool {
        self.correct_by_condition
            .get(&condition.class())
            .copied()
            .unwrap_or(self.correct)
    }
}

/// True/false attention-check items graded by exact match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionBank {
    pub items: Vec<AttentionItem>,
}

/// An attention item as shown to participants, without its answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionPrompt {
    pub id: String,
    pub text: String,
}

impl AttentionBank {
    pub fn bundled() -> Self {
        serde_json::from_str(DEFAULT_ATTENTION).expect("bundled attention bank parses")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        let bank: Self = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        if bank.items.is_empty() {
            return Err("attention bank has no items".into());
        }
        Ok(bank)
    }

    pub fn prompts(&self) -> Vec<AttentionPrompt> {
        self.items
            .iter()
            .map(|i| AttentionPrompt {
                id: i.id.clone(),
                text: i.text.clone(),
            })
            .collect()
    }

    /// The answers that pass the check in `condition`.
    pub fn answer_key(&self, condition: Condition) -> BTreeMap<String, bool> {
        self.items
            .iter()
            .map(|i| (i.id.clone(), i.correct_for(condition)))
            .collect()
    }

    /// True only when every item is answered correctly. Missing items count
    /// as wrong.
    pub fn grade(&self, condition: Condition, answers: &BTreeMap<String, bool>) -> bool {
        self.items
            .iter()
            .all(|i| answers.get(&i.id) == Some(&i.correct_for(condition)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visibility_rules() {
        let bank = SurveyBank::bundled();
        assert_eq!(bank.questions.len(), 16);
        let all: BTreeSet<String> = (1..=16).map(|i| format!("Q{i}")).collect();
        let fp_hidden: BTreeSet<String> = ["Q4", "Q10", "Q11", "Q12", "Q13"].map(String::from).into();
        assert!(bank.visible_ids(Condition::F).is_empty());
        assert_eq!(bank.visible_ids(Condition::Fp), &all - &fp_hidden);
        for c in Condition::ALL.into_iter().filter(|c| c.class() == ConditionClass::FPE) {
            assert_eq!(bank.visible_ids(c), all);
        }
    }

    #[test]
    fn attention_grading() {
        let bank = AttentionBank::bundled();
        assert_eq!(bank.items.len(), 2);
        let key = bank.answer_key(Condition::Fp);
        assert!(bank.grade(Condition::Fp, &key));
        assert!(!bank.grade(Condition::F, &key));
        assert!(bank.grade(Condition::F, &bank.answer_key(Condition::F)));
        let mut partial = key.clone();
        partial.remove("A1");
        assert!(!bank.grade(Condition::Fp, &partial));
    }
}
