//! The evaluation card: a checklist documenting how a user study was
//! designed, executed and analysed.
//!
//! Cards are stored as TOML next to the study configuration and rendered to
//! Markdown. The Markdown form parses back to the same card.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::fingerprint;
use crate::study::StudyConfig;

const CHECKLIST_JSON: &str = include_str!("../banks/evaluation_card.json");
const TITLE: &str = "# Evaluation Card";
const FINGERPRINT_PREFIX: &str = "Study configuration fingerprint: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: String,
    pub question: String,
    /// Shared heading of lettered sub-items such as 4a and 4b.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl ItemSpec {
    /// `4 (a)` for `4a`, `2` for `2`.
    pub fn label(&self) -> String {
        match self.id.find(|c: char| c.is_ascii_alphabetic()) {
            Some(i) => format!("{} ({})", &self.id[..i], &self.id[i..]),
            None => self.id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub key: String,
    pub title: String,
    /// Optional phases are only checked when present on the card.
    pub required: bool,
    pub items: Vec<ItemSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checklist {
    pub phases: Vec<PhaseSpec>,
}

/// The bundled checklist.
pub fn checklist() -> &'static Checklist {
    static CELL: OnceLock<Checklist> = OnceLock::new();
    CELL.get_or_init(|| serde_json::from_str(CHECKLIST_JSON).expect("bundled checklist parses"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Answer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Reason the item does not apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_applicable: Option<String>,
    /// Design item 1 only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_registered: Option<bool>,
    /// Design item 1 only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
}

impl Answer {
    pub fn text(answer: impl Into<String>) -> Self {
        Self {
            answer: Some(answer.into()),
            ..Self::default()
        }
    }

    pub fn not_applicable(reason: impl Into<String>) -> Self {
        Self {
            not_applicable: Some(reason.into()),
            ..Self::default()
        }
    }
}

pub type PhaseAnswers = BTreeMap<String, Answer>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationCard {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study_config_fingerprint: Option<String>,
    #[serde(default)]
    pub design: PhaseAnswers,
    #[serde(default)]
    pub execution: PhaseAnswers,
    #[serde(default)]
    pub analysis: PhaseAnswers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_preparation: Option<PhaseAnswers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_interface: Option<PhaseAnswers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey_design: Option<PhaseAnswers>,
}

/// One validation problem, named by phase and item, e.g. `analysis/1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub item: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.item, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CardError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed card: {0}")]
    Malformed(String),
    #[error("malformed card, line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("card has {} issue(s): {}", .0.len(), .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Issue>),
}

fn blank(s: &Option<String>) -> bool {
    s.as_deref().is_none_or(|s| s.trim().is_empty())
}

fn single_line(s: &str) -> bool {
    !s.contains(['\n', '\r'])
}

impl EvaluationCard {
    pub fn phase(&self, key: &str) -> Option<&PhaseAnswers> {
        match key {
            "design" => Some(&self.design),
            "execution" => Some(&self.execution),
            "analysis" => Some(&self.analysis),
            "dataset_preparation" => self.dataset_preparation.as_ref(),
            "user_interface" => self.user_interface.as_ref(),
            "survey_design" => self.survey_design.as_ref(),
            _ => None,
        }
    }

    /// Creates optional phases on first use.
    pub fn phase_mut(&mut self, key: &str) -> Option<&mut PhaseAnswers> {
        match key {
            "design" => Some(&mut self.design),
            "execution" => Some(&mut self.execution),
            "analysis" => Some(&mut self.analysis),
            "dataset_preparation" => Some(self.dataset_preparation.get_or_insert_with(BTreeMap::new)),
            "user_interface" => Some(self.user_interface.get_or_insert_with(BTreeMap::new)),
            "survey_design" => Some(self.survey_design.get_or_insert_with(BTreeMap::new)),
            _ => None,
        }
    }

    /// Binds the card to a study configuration.
    pub fn stamp(&mut self, config: &StudyConfig) {
        self.study_config_fingerprint = Some(fingerprint(config));
    }

    pub fn from_toml(text: &str) -> Result<Self, CardError> {
        toml::from_str(text).map_err(|e| CardError::Malformed(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("cards serialize")
    }

    /// Reads a card from TOML or from its rendered Markdown.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CardError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CardError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if text.trim_start().starts_with(TITLE) {
            parse_card(&text)
        } else {
            Self::from_toml(&text)
        }
    }
}

fn check_item(key: &str, item: &ItemSpec, a: Option<&Answer>) -> Option<String> {
    let Some(a) = a else {
        return Some("no answer".into());
    };
    let answered = !blank(&a.answer);
    let na = a.not_applicable.is_some();
    if answered && na {
        return Some("both answered and marked not applicable".into());
    }
    if na && blank(&a.not_applicable) {
        return Some("marked not applicable without a reason".into());
    }
    if !answered && !na {
        return Some("no answer".into());
    }
    let prereg_item = key == "design" && item.id == "1";
    if !prereg_item && (a.pre_registered.is_some() || a.link.is_some()) {
        return Some("pre_registered and link belong to design item 1".into());
    }
    if let Some(link) = &a.link {
        if !single_line(link) {
            return Some("link must be a single line".into());
        }
    }
    if prereg_item && answered {
        match a.pre_registered {
            None => return Some("state whether the study was pre-registered".into()),
            Some(true) if blank(&a.link) => return Some("pre-registered studies need a link".into()),
            _ => {}
        }
    }
    None
}

/// Every problem on the card. Empty iff the card is complete.
pub fn validate_card(card: &EvaluationCard) -> Vec<Issue> {
    let mut issues = Vec::new();
    if let Some(fp) = &card.study_config_fingerprint {
        if fp.is_empty() || fp.contains(char::is_whitespace) || fp.contains('`') {
            issues.push(Issue {
                item: "study_config_fingerprint".into(),
                message: "must be a single token".into(),
            });
        }
    }
    for phase in &checklist().phases {
        let Some(answers) = card.phase(&phase.key) else {
            continue;
        };
        for item in &phase.items {
            if let Some(message) = check_item(&phase.key, item, answers.get(&item.id)) {
                issues.push(Issue {
                    item: format!("{}/{}", phase.key, item.id),
                    message,
                });
            }
        }
        for id in answers.keys() {
            if !phase.items.iter().any(|i| &i.id == id) {
                issues.push(Issue {
                    item: format!("{}/{id}", phase.key),
                    message: "not a checklist item".into(),
                });
            }
        }
    }
    issues
}

fn quote(out: &mut String, text: &str) {
    for line in text.split('\n') {
        if line.is_empty() {
            out.push_str(">\n");
        } else {
            out.push_str("> ");
            out.push_str(line);
            out.push('\n');
        }
    }
}

/// Markdown rendering of a valid card.
pub fn render_card(card: &EvaluationCard) -> Result<String, CardError> {
    let issues = validate_card(card);
    if !issues.is_empty() {
        return Err(CardError::Invalid(issues));
    }
    let mut out = String::new();
    out.push_str(TITLE);
    out.push('\n');
    if let Some(fp) = &card.study_config_fingerprint {
        out.push('\n');
        out.push_str(&format!("{FINGERPRINT_PREFIX}`{fp}`\n"));
    }
    for phase in &checklist().phases {
        let Some(answers) = card.phase(&phase.key) else {
            continue;
        };
        out.push_str(&format!("\n## {}\n", phase.title));
        let mut last_parent: Option<&str> = None;
        for item in &phase.items {
            let a = &answers[&item.id];
            let level = match &item.parent {
                Some(parent) => {
                    if last_parent != Some(parent.as_str()) {
                        let number = item.id.trim_end_matches(|c: char| c.is_ascii_alphabetic());
                        out.push_str(&format!("\n### {number}. {parent}\n"));
                        last_parent = Some(parent);
                    }
                    "####"
                }
                None => {
                    last_parent = None;
                    "###"
                }
            };
            out.push_str(&format!("\n{level} {}. {}\n\n", item.label(), item.question));
            if let Some(p) = a.pre_registered {
                out.push_str(&format!("Pre-registered: {}\n", if p { "yes" } else { "no" }));
            }
            if let Some(link) = &a.link {
                out.push_str(&format!("Link: {link}\n"));
            }
            if a.pre_registered.is_some() || a.link.is_some() {
                out.push('\n');
            }
            if let Some(text) = &a.answer {
                quote(&mut out, text);
            }
            if let Some(reason) = &a.not_applicable {
                out.push_str("Not applicable:\n\n");
                quote(&mut out, reason);
            }
        }
    }
    Ok(out)
}

enum Target {
    Answer,
    NotApplicable,
}

/// Parses a card rendered by [`render_card`].
pub fn parse_card(text: &str) -> Result<EvaluationCard, CardError> {
    let mut card = EvaluationCard::default();
    let mut seen_title = false;
    let mut phase: Option<&PhaseSpec> = None;
    let mut item: Option<String> = None;
    let mut target = Target::Answer;
    let mut block: Option<Vec<String>> = None;

    fn flush(
        card: &mut EvaluationCard,
        phase: Option<&PhaseSpec>,
        item: &Option<String>,
        target: &Target,
        block: &mut Option<Vec<String>>,
    ) {
        if let (Some(lines), Some(p), Some(id)) = (block.take(), phase, item) {
            let answers = card.phase_mut(&p.key).expect("known phase");
            let entry = answers.entry(id.clone()).or_default();
            let text = lines.join("\n");
            match target {
                Target::Answer => entry.answer = Some(text),
                Target::NotApplicable => entry.not_applicable = Some(text),
            }
        }
    }

    for (n, line) in text.split('\n').enumerate() {
        let err = |message: String| CardError::Line { line: n + 1, message };
        let quoted = if line == ">" {
            Some("")
        } else {
            line.strip_prefix("> ")
        };
        if let Some(q) = quoted {
            if item.is_none() {
                return Err(err("quoted text outside an item".into()));
            }
            block.get_or_insert_with(Vec::new).push(q.to_string());
            continue;
        }
        flush(&mut card, phase, &item, &target, &mut block);
        if line.trim().is_empty() {
            continue;
        }
        if !seen_title {
            if line == TITLE {
                seen_title = true;
                continue;
            }
            return Err(err(format!("expected `{TITLE}`")));
        }
        if let Some(rest) = line.strip_prefix(FINGERPRINT_PREFIX) {
            let fp = rest
                .strip_prefix('`')
                .and_then(|r| r.strip_suffix('`'))
                .ok_or_else(|| err("fingerprint must be in backticks".into()))?;
            card.study_config_fingerprint = Some(fp.to_string());
        } else if let Some(title) = line.strip_prefix("## ") {
            let p = checklist()
                .phases
                .iter()
                .find(|p| p.title == title)
                .ok_or_else(|| err(format!("unknown phase `{title}`")))?;
            card.phase_mut(&p.key);
            phase = Some(p);
            item = None;
        } else if let Some(heading) = line.strip_prefix("#### ").or_else(|| line.strip_prefix("### ")) {
            let p = phase.ok_or_else(|| err("item before any phase".into()))?;
            let label = heading
                .split_once(". ")
                .map(|(l, _)| l)
                .ok_or_else(|| err("item heading needs `N. question`".into()))?;
            let id: String = label.chars().filter(|c| !matches!(c, ' ' | '(' | ')')).collect();
            if p.items.iter().any(|i| i.id == id) {
                card.phase_mut(&p.key).expect("known phase").entry(id.clone()).or_default();
                item = Some(id);
            } else if p.items.iter().any(|i| i.parent.is_some() && i.id.starts_with(&id)) {
                item = None;
            } else {
                return Err(err(format!("unknown item `{label}` in {}", p.key)));
            }
            target = Target::Answer;
        } else if let Some(v) = line.strip_prefix("Pre-registered: ") {
            let answer = current(&mut card, phase, &item).ok_or_else(|| err("field outside an item".into()))?;
            answer.pre_registered = Some(match v {
                "yes" => true,
                "no" => false,
                _ => return Err(err(format!("expected yes or no, got `{v}`"))),
            });
        } else if let Some(v) = line.strip_prefix("Link: ") {
            let answer = current(&mut card, phase, &item).ok_or_else(|| err("field outside an item".into()))?;
            answer.link = Some(v.to_string());
        } else if line == "Not applicable:" {
            if item.is_none() {
                return Err(err("field outside an item".into()));
            }
            target = Target::NotApplicable;
        } else {
            return Err(err(format!("unexpected line `{line}`")));
        }
    }
    flush(&mut card, phase, &item, &target, &mut block);
    if !seen_title {
        return Err(CardError::Malformed("empty document".into()));
    }
    Ok(card)
}

fn current<'a>(card: &'a mut EvaluationCard, phase: Option<&PhaseSpec>, item: &Option<String>) -> Option<&'a mut Answer> {
    let (p, id) = (phase?, item.as_ref()?);
    card.phase_mut(&p.key)?.get_mut(id)
}
