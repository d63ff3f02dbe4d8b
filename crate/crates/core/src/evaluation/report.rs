use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::*;
use crate::data::Codebook;
use crate::study::{Condition, DecisionRow, ResponseSet, SurveyBank};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub se_mode: SeMode,
    /// Protected attribute for AAOD/EOD; the codebook's first when absent.
    pub protected: Option<String>,
}

/// One row of the decision-metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition: Condition,
    pub n_participants: usize,
    pub n_responses: usize,
    pub accuracy: Estimate,
    pub f1: Estimate,
    pub f1_degenerate: bool,
    pub avg_time_s: Estimate,
    pub over_reliance: Estimate,
    pub under_reliance: Estimate,
    pub aaod: Option<f64>,
    pub eod: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fairness: Option<Fairness>,
    pub likert: Vec<LikertSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub se_mode: SeMode,
    pub protected_attribute: Option<String>,
    pub rows: Vec<MetricsReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Metrics for each condition present in the export.
pub fn build_report(
    set: &ResponseSet,
    codebook: &Codebook,
    bank: &SurveyBank,
    options: &ReportOptions,
) -> Result<Report, EvalError> {
    let protected = match &options.protected {
        Some(p) => {
            codebook
                .protected(p)
                .ok_or_else(|| EvalError::UnknownProtected(p.clone()))?;
            Some(p.clone())
        }
        None => codebook.protected_attributes.first().map(|p| p.feature.clone()),
    };
    let mut diagnostics = Vec::new();
    let mut rows = Vec::new();
    for condition in set.conditions() {
        let decisions: Vec<DecisionRow> = set
            .decisions
            .iter()
            .filter(|d| d.condition == condition)
            .cloned()
            .collect();
        if decisions.is_empty() {
            diagnostics.push(format!("condition {condition}: no decisions, row omitted"));
            continue;
        }
        let mode = options.se_mode;
        let af = compute_accuracy_f1(&decisions, mode)?;
        let reliance = compute_reliance(&decisions, mode)?;
        let time = compute_avg_time(&decisions, mode)?;
        let fairness = match &protected {
            Some(p) => {
                let f = compute_fairness(&decisions, codebook, p)?;
                diagnostics.extend(f.diagnostics.iter().map(|d| format!("condition {condition}: {d}")));
                Some(f)
            }
            None => None,
        };
        let surveys: Vec<_> = set.surveys.iter().filter(|s| s.condition == condition).cloned().collect();
        let mut likert = Vec::new();
        for q in bank.visible(condition) {
            match aggregate_likert(&surveys, &q.id, condition, bank) {
                Ok(s) => likert.push(s),
                Err(EvalError::Empty) => {}
                Err(e) => return Err(e),
            }
        }
        let participants: BTreeSet<(&str, &str)> = decisions
            .iter()
            .map(|d| (d.session_id.as_str(), d.participant_id.as_str()))
            .collect();
        rows.push(MetricsReport {
            condition,
            n_participants: participants.len(),
            n_responses: decisions.len(),
            accuracy: af.accuracy,
            f1: af.f1,
            f1_degenerate: af.f1_degenerate,
            avg_time_s: time,
            over_reliance: reliance.over,
            under_reliance: reliance.under,
            aaod: fairness.as_ref().and_then(|f| f.aaod),
            eod: fairness.as_ref().and_then(|f| f.eod),
            fairness,
            likert,
        });
    }
    Ok(Report {
        se_mode: options.se_mode,
        protected_attribute: protected,
        rows,
        diagnostics,
    })
}

/// `value` rounded to `decimals` places with trailing zeros removed.
pub fn format_decimal(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// `value±se` in the style of the decision-metrics table: the value at
/// `decimals` places, the error at two, both without trailing zeros.
pub fn format_estimate(e: Estimate, decimals: usize) -> String {
    format!("{}±{}", format_decimal(e.value, decimals), format_decimal(e.se, 2))
}

/// `M=3.33, SD=1.22`.
pub fn format_likert(s: &LikertSummary) -> String {
    format!("M={:.2}, SD={:.2}", s.mean, s.sd)
}

fn table(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut out = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let pad = w - c.chars().count();
            out.push_str(c);
            out.push_str(&" ".repeat(pad));
        }
        out.trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Aligned plain-text tables: decision metrics, then Likert summaries.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = [
            "Condition",
            "N",
            "Accuracy",
            "F1",
            "Avg Time (s)",
            "Over-Reliance",
            "Under-Reliance",
            "AAOD",
            "EOD",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format_decimal(v, 3));
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.condition.to_string(),
                    r.n_participants.to_string(),
                    format_estimate(r.accuracy, 3),
                    format_estimate(r.f1, 3),
                    format_estimate(r.avg_time_s, 2),
                    format_estimate(r.over_reliance, 3),
                    format_estimate(r.under_reliance, 3),
                    opt(r.aaod),
                    opt(r.eod),
                ]
            })
            .collect();
        let mut out = table(&header, &body);

        let questions: Vec<String> = {
            let mut seen = Vec::new();
            for r in &self.rows {
                for l in &r.likert {
                    if !seen.contains(&l.question) {
                        seen.push(l.question.clone());
                    }
                }
            }
            seen
        };
        if !questions.is_empty() {
            let mut header = vec!["Condition".to_string()];
            header.extend(questions.iter().cloned());
            let body: Vec<Vec<String>> = self
                .rows
                .iter()
                .map(|r| {
                    let mut row = vec![r.condition.to_string()];
                    row.extend(questions.iter().map(|q| {
                        r.likert
                            .iter()
                            .find(|l| &l.question == q)
                            .map_or("-".to_string(), format_likert)
                    }));
                    row
                })
                .collect();
            out.push('\n');
            out.push_str(&table(&header, &body));
        }
        if let Some(p) = &self.protected_attribute {
            let _ = writeln!(out, "\nProtected attribute: {p}");
        }
        let _ = writeln!(out, "Standard errors: {}", self.se_mode.describe());
        for d in &self.diagnostics {
            let _ = writeln!(out, "note: {d}");
        }
        out
    }
}
