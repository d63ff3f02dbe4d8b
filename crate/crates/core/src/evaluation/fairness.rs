use serde::{Deserialize, Serialize};

use super::{Confusion, EvalError};
use crate::data::{Codebook, Group};
use crate::study::DecisionRow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub group: Group,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub support_pos: usize,
    pub support_neg: usize,
}

impl GroupRates {
    fn from_confusion(group: Group, c: &Confusion) -> Self {
        Self {
            group,
            tpr: c.tpr(),
            fpr: c.fpr(),
            support_pos: c.tp + c.fn_,
            support_neg: c.fp + c.tn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fairness {
    /// Average absolute odds difference between minority and majority.
    pub aaod: Option<f64>,
    /// Equal opportunity difference (absolute TPR gap).
    pub eod: Option<f64>,
    pub minority: GroupRates,
    pub majority: GroupRates,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Fairness of `(prediction, truth, group)` triples.
pub fn fairness_from_labels(labelled: &[(u8, u8, Group)]) -> Fairness {
    let confusion = |g: Group| {
        Confusion::from_pairs(
            labelled
                .iter()
                .filter(|(_, _, group)| *group == g)
                .map(|&(p, t, _)| (p, t)),
        )
    };
    let minority = GroupRates::from_confusion(Group::Minority, &confusion(Group::Minority));
    let majority = GroupRates::from_confusion(Group::Majority, &confusion(Group::Majority));
    let mut diagnostics = Vec::new();
    for g in [&minority, &majority] {
        if g.support_pos == 0 {
            diagnostics.push(format!("{:?} group has no positive labels; TPR undefined", g.group));
        }
        if g.support_neg == 0 {
            diagnostics.push(format!("{:?} group has no negative labels; FPR undefined", g.group));
        }
    }
    let tpr_gap = minority.tpr.zip(majority.tpr).map(|(a, b)| (a - b).abs());
    let fpr_gap = minority.fpr.zip(majority.fpr).map(|(a, b)| (a - b).abs());
    Fairness {
        aaod: tpr_gap.zip(fpr_gap).map(|(t, f)| 0.5 * (f + t)),
        eod: tpr_gap,
        minority,
        majority,
        diagnostics,
    }
}

/// Fairness of human decisions with respect to `protected`.
pub fn compute_fairness(rows: &[DecisionRow], codebook: &Codebook, protected: &str) -> Result<Fairness, EvalError> {
    let attr = codebook
        .protected(protected)
        .ok_or_else(|| EvalError::UnknownProtected(protected.to_string()))?;
    let spec = codebook
        .feature(protected)
        .ok_or_else(|| EvalError::UnknownProtected(protected.to_string()))?;
    let mut labelled = Vec::with_capacity(rows.len());
    let mut ungrouped = 0;
    for (i, r) in rows.iter().enumerate() {
        let shown = r
            .protected
            .get(protected)
            .ok_or_else(|| EvalError::MissingProtected {
                row: i,
                feature: protected.to_string(),
            })?;
        let group = match spec.parse_cell(shown) {
            Ok(v) => codebook.group_of(attr, &v),
            Err(_) => None,
        }
        .or_else(|| {
            if *shown == attr.minority {
                Some(Group::Minority)
            } else if *shown == attr.majority {
                Some(Group::Majority)
            } else {
                None
            }
        });
        match group {
            Some(g) => labelled.push((r.human_decision, r.ground_truth, g)),
            None => ungrouped += 1,
        }
    }
    let mut f = fairness_from_labels(&labelled);
    if ungrouped > 0 {
        f.diagnostics
            .push(format!("{ungrouped} responses belong to neither compared group and were skipped"));
    }
    Ok(f)
}
