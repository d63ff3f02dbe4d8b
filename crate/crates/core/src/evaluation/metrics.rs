use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, SeMode};
use crate::study::DecisionRow;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Binary confusion counts, label 1 positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Counts `(prediction, truth)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut c = Self::default();
        for (pred, truth) in pairs {
            match (pred, truth) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// F1 on the positive class, and whether it is degenerate (no positive
    /// predictions and no positive labels, reported as 0).
    pub fn f1(&self) -> (f64, bool) {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            (0.0, true)
        } else {
            (2.0 * self.tp as f64 / denom as f64, false)
        }
    }

    /// True-positive rate, absent without positive labels.
    pub fn tpr(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }

    /// False-positive rate, absent without negative labels.
    pub fn fpr(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.fp as f64 / neg as f64)
    }
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Mean and standard error of a per-response quantity. Clustered mode
/// averages within participants first and uses the spread of those means.
fn mean_se(rows: &[DecisionRow], mode: SeMode, value: impl Fn(&DecisionRow) -> f64) -> Estimate {
    let values: Vec<f64> = rows.iter().map(&value).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let se = match mode {
        SeMode::Pooled => sample_sd(&values) / (values.len() as f64).sqrt(),
        SeMode::Clustered => {
            let means: Vec<f64> = by_participant(rows)
                .values()
                .map(|rs| rs.iter().map(|r| value(r)).sum::<f64>() / rs.len() as f64)
                .collect();
            sample_sd(&means) / (means.len() as f64).sqrt()
        }
    };
    Estimate { value: mean, se }
}

pub(crate) fn by_participant(rows: &[DecisionRow]) -> BTreeMap<(&str, &str), Vec<&DecisionRow>> {
    let mut m: BTreeMap<(&str, &str), Vec<&DecisionRow>> = BTreeMap::new();
    for r in rows {
        m.entry((r.session_id.as_str(), r.participant_id.as_str())).or_default().push(r);
    }
    m
}

fn non_empty(rows: &[DecisionRow]) -> Result<(), EvalError> {
    if rows.is_empty() {
        Err(EvalError::Empty)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyF1 {
    pub accuracy: Estimate,
    pub f1: Estimate,
    pub f1_degenerate: bool,
    pub confusion: Confusion,
}

/// Accuracy and F1 of human decisions against ground truth.
///
/// The F1 standard error is a leave-one-out jackknife over responses
/// (pooled) or participants (clustered), since F1 is not a mean.
pub fn compute_accuracy_f1(rows: &[DecisionRow], mode: SeMode) -> Result<AccuracyF1, EvalError> {
    non_empty(rows)?;
    let confusion = Confusion::from_pairs(rows.iter().map(|r| (r.human_decision, r.ground_truth)));
    let accuracy = mean_se(rows, mode, |r| f64::from(u8::from(r.human_decision == r.ground_truth)));
    let (f1, degenerate) = confusion.f1();

    let groups: Vec<Confusion> = match mode {
        SeMode::Pooled => rows
            .iter()
            .map(|r| Confusion::from_pairs([(r.human_decision, r.ground_truth)]))
            .collect(),
        SeMode::Clustered => by_participant(rows)
            .values()
            .map(|rs| Confusion::from_pairs(rs.iter().map(|r| (r.human_decision, r.ground_truth))))
            .collect(),
    };
    let g = groups.len();
    let se = if g < 2 {
        0.0
    } else {
        let leave_out: Vec<f64> = groups
            .iter()
            .map(|c| {
                Confusion {
                    tp: confusion.tp - c.tp,
                    fp: confusion.fp - c.fp,
                    tn: confusion.tn - c.tn,
                    fn_: confusion.fn_ - c.fn_,
                }
                .f1()
                .0
            })
            .collect();
        let mean = leave_out.iter().sum::<f64>() / g as f64;
        let ss: f64 = leave_out.iter().map(|v| (v - mean) * (v - mean)).sum();
        ((g - 1) as f64 / g as f64 * ss).sqrt()
    };
    Ok(AccuracyF1 {
        accuracy,
        f1: Estimate { value: f1, se },
        f1_degenerate: degenerate,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reliance {
    pub over: Estimate,
    pub under: Estimate,
    /// Human agreed with a correct AI or overrode a wrong one.
    pub correct: usize,
    /// Human adopted a wrong AI prediction.
    pub over_count: usize,
    /// Human overrode a correct AI prediction.
    pub under_count: usize,
    pub n: usize,
}

/// Over- and under-reliance as shares of all responses.
///
/// Every response falls in exactly one of: correct, over-reliance,
/// under-reliance. That identity is checked on the counts.
pub fn compute_reliance(rows: &[DecisionRow], mode: SeMode) -> Result<Reliance, EvalError> {
    non_empty(rows)?;
    let mut preds = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        preds.push(r.reliance_prediction().ok_or(EvalError::MissingAiPrediction { row: i })?);
    }
    let over_flag = |r: &DecisionRow, ai: u8| r.human_decision == ai && ai != r.ground_truth;
    let under_flag = |r: &DecisionRow, ai: u8| r.human_decision != ai && ai == r.ground_truth;
    let mut over_count = 0;
    let mut under_count = 0;
    let mut correct = 0;
    for (r, &ai) in rows.iter().zip(&preds) {
        over_count += usize::from(over_flag(r, ai));
        under_count += usize::from(under_flag(r, ai));
        correct += usize::from(r.human_decision == r.ground_truth);
    }
    if correct + over_count + under_count != rows.len() {
        return Err(EvalError::Identity {
            correct,
            over: over_count,
            under: under_count,
            n: rows.len(),
        });
    }
    let ai = |r: &DecisionRow| r.reliance_prediction().expect("checked above");
    let over = mean_se(rows, mode, |r| f64::from(u8::from(over_flag(r, ai(r)))));
    let under = mean_se(rows, mode, |r| f64::from(u8::from(under_flag(r, ai(r)))));
    Ok(Reliance {
        over,
        under,
        correct,
        over_count,
        under_count,
        n: rows.len(),
    })
}

/// Mean seconds per decision.
pub fn compute_avg_time(rows: &[DecisionRow], mode: SeMode) -> Result<Estimate, EvalError> {
    non_empty(rows)?;
    Ok(mean_se(rows, mode, |r| r.elapsed_ms as f64 / 1000.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::Condition;

    fn rows(spec: &[(u8, Option<u8>, u8)]) -> Vec<DecisionRow> {
        spec.iter()
            .enumerate()
            .map(|(i, &(h, ai, t))| {
                let mut r = crate::study::tests_support::row(Condition::Fp, h, ai, t);
                r.instance_id = format!("i{i}");
                r
            })
            .collect()
    }

    #[test]
    fn hand_confusion() {
        let r = rows(&[(1, Some(1), 1), (1, Some(1), 0), (0, Some(0), 0), (0, Some(0), 1)]);
        let m = compute_accuracy_f1(&r, SeMode::Pooled).unwrap();
        assert_eq!(m.accuracy.value, 0.5);
        assert_eq!(m.f1.value, 0.5);
        assert!(!m.f1_degenerate);
        let all_correct = rows(&[(1, None, 1), (0, None, 0)]);
        let m = compute_accuracy_f1(&all_correct, SeMode::Pooled).unwrap();
        assert_eq!((m.accuracy.value, m.f1.value), (1.0, 1.0));
    }

    #[test]
    fn degenerate_f1() {
        let r = rows(&[(0, None, 0), (0, None, 0)]);
        let m = compute_accuracy_f1(&r, SeMode::Pooled).unwrap();
        assert_eq!(m.f1.value, 0.0);
        assert!(m.f1_degenerate);
    }

    #[test]
    fn reliance_fixture() {
        // 3 adopt a wrong AI, 2 override a right AI, 5 agree with a right AI.
        let mut spec = vec![(1, Some(1), 0); 3];
        spec.extend([(0, Some(1), 1); 2]);
        spec.extend([(1, Some(1), 1); 5]);
        let r = compute_reliance(&rows(&spec), SeMode::Pooled).unwrap();
        assert!((r.over.value - 0.3).abs() < 1e-12);
        assert!((r.under.value - 0.2).abs() < 1e-12);
        assert_eq!(r.correct + r.over_count + r.under_count, 10);
    }

    #[test]
    fn reliance_needs_predictions() {
        let mut r = rows(&[(1, None, 1)]);
        r[0].model_prediction = None;
        assert!(matches!(
            compute_reliance(&r, SeMode::Pooled),
            Err(EvalError::MissingAiPrediction { row: 0 })
        ));
    }

    #[test]
    fn avg_time() {
        let mut r = rows(&[(1, None, 1); 3]);
        for (row, ms) in r.iter_mut().zip([2000, 4000, 6000]) {
            row.elapsed_ms = ms;
        }
        let t = compute_avg_time(&r, SeMode::Pooled).unwrap();
        assert!((t.value - 4.0).abs() < 1e-12);
        assert!((t.se - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        let same = rows(&[(1, None, 1); 4]);
        assert_eq!(compute_avg_time(&same, SeMode::Pooled).unwrap(), Estimate { value: 5.0, se: 0.0 });
    }

    #[test]
    fn clustered_se_uses_participant_means() {
        let mut r = rows(&[(1, None, 1), (0, None, 1), (1, None, 1), (1, None, 1)]);
        r[2].session_id = "s2".into();
        r[3].session_id = "s2".into();
        let m = compute_accuracy_f1(&r, SeMode::Clustered).unwrap();
        // Participant means 0.5 and 1.0.
        assert!((m.accuracy.se - 0.25).abs() < 1e-12);
    }
}
