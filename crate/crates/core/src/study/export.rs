use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Condition, Phase, SurveyBank};

/// One decision, as exported for analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub study_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub condition: Condition,
    pub task_index: usize,
    pub instance_id: String,
    pub human_decision: u8,
    /// The prediction shown to the participant; absent in condition F.
    pub ai_prediction: Option<u8>,
    /// The model's prediction whether shown or not.
    pub model_prediction: Option<u8>,
    pub ground_truth: u8,
    pub elapsed_ms: u64,
    pub served_at: DateTime<Utc>,
    pub submitted_at: DateTime<Utc>,
    pub client_dwell_ms: Option<u64>,
    /// Display value of each protected attribute, by feature name.
    #[serde(default)]
    pub protected: BTreeMap<String, String>,
}

impl DecisionRow {
    /// The AI prediction reliance is measured against: the shown one, or the
    /// hidden model prediction when nothing was shown.
    pub fn reliance_prediction(&self) -> Option<u8> {
        self.ai_prediction.or(self.model_prediction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub study_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub condition: Condition,
    pub answers: BTreeMap<String, u8>,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    pub submitted_at: DateTime<Utc>,
}

/// A session left out of the analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub session_id: String,
    pub participant_id: String,
    pub phase: Phase,
    pub reason: String,
}

/// Responses of done sessions plus the excluded sessions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub decisions: Vec<DecisionRow>,
    pub surveys: Vec<SurveyRow>,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("export I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("export CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("export row {row}: {reason}")]
    Invalid { row: usize, reason: String },
}

const DECISION_COLUMNS: [&str; 14] = [
    "study",
    "session",
    "participant",
    "condition",
    "task_index",
    "instance",
    "human_decision",
    "ai_prediction",
    "model_prediction",
    "ground_truth",
    "elapsed_ms",
    "served_at",
    "submitted_at",
    "client_dwell_ms",
];
const PROTECTED_PREFIX: &str = "protected:";
const DEMOGRAPHIC_PREFIX: &str = "demographic:";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl ResponseSet {
    pub fn merge(sets: impl IntoIterator<Item = ResponseSet>) -> Self {
        let mut out = ResponseSet::default();
        for s in sets {
            out.decisions.extend(s.decisions);
            out.surveys.extend(s.surveys);
            out.exclusions.extend(s.exclusions);
        }
        out
    }

    pub fn conditions(&self) -> BTreeSet<Condition> {
        self.decisions
            .iter()
            .map(|d| d.condition)
            .chain(self.surveys.iter().map(|s| s.condition))
            .collect()
    }

    /// Decision rows, one per line, with a `protected:<feature>` column per
    /// protected attribute.
    pub fn write_decisions_csv<W: Write>(&self, w: W) -> Result<(), ExportError> {
        let protected: BTreeSet<&String> = self.decisions.iter().flat_map(|d| d.protected.keys()).collect();
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = DECISION_COLUMNS.iter().map(|c| c.to_string()).collect();
        header.extend(protected.iter().map(|p| format!("{PROTECTED_PREFIX}{p}")));
        out.write_record(&header)?;
        for d in &self.decisions {
            let mut rec = vec![
                d.study_id.clone(),
                d.session_id.clone(),
                d.participant_id.clone(),
                d.condition.to_string(),
                d.task_index.to_string(),
                d.instance_id.clone(),
                d.human_decision.to_string(),
                opt(d.ai_prediction),
                opt(d.model_prediction),
                d.ground_truth.to_string(),
                d.elapsed_ms.to_string(),
                timestamp(&d.served_at),
                timestamp(&d.submitted_at),
                opt(d.client_dwell_ms),
            ];
            rec.extend(protected.iter().map(|p| d.protected.get(*p).cloned().unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_decisions_csv<R: Read>(r: R) -> Result<Vec<DecisionRow>, ExportError> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let mut idx = BTreeMap::new();
        for c in DECISION_COLUMNS {
            match col(c) {
                Some(i) => {
                    idx.insert(c, i);
                }
                None if matches!(c, "ai_prediction" | "model_prediction" | "client_dwell_ms" | "task_index") => {}
                None => {
                    return Err(ExportError::Invalid {
                        row: 0,
                        reason: format!("missing column `{c}`"),
                    })
                }
            }
        }
        let protected: Vec<(usize, String)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix(PROTECTED_PREFIX).map(|f| (i, f.to_string())))
            .collect();

        let mut rows = Vec::new();
        for (n, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = n + 1;
            let bad = |reason: String| ExportError::Invalid { row, reason };
            let get = |c: &str| idx.get(c).and_then(|&i| rec.get(i)).unwrap_or("").trim();
            let num = |c: &str| -> Result<u64, ExportError> {
                get(c).parse().map_err(|_| bad(format!("`{c}` = `{}` is not an integer", get(c))))
            };
            let opt_num = |c: &str| -> Result<Option<u64>, ExportError> {
                if get(c).is_empty() {
                    Ok(None)
                } else {
                    num(c).map(Some)
                }
            };
            let binary = |c: &str, v: u64| -> Result<u8, ExportError> {
                u8::try_from(v)
                    .ok()
                    .filter(|v| *v <= 1)
                    .ok_or_else(|| bad(format!("`{c}` must be 0 or 1")))
            };
            let time = |c: &str| -> Result<DateTime<Utc>, ExportError> {
                DateTime::parse_from_rfc3339(get(c))
                    .map(|t| t.with_timezone(&Utc))
                    .map_err(|e| bad(format!("`{c}`: {e}")))
            };
            rows.push(DecisionRow {
                study_id: get("study").to_string(),
                session_id: get("session").to_string(),
                participant_id: get("participant").to_string(),
                condition: get("condition").parse().map_err(|e| bad(format!("{e}")))?,
                task_index: opt_num("task_index")?.unwrap_or(0) as usize,
                instance_id: get("instance").to_string(),
                human_decision: binary("human_decision", num("human_decision")?)?,
                ai_prediction: opt_num("ai_prediction")?
                    .map(|v| binary("ai_prediction", v))
                    .transpose()?,
                model_prediction: opt_num("model_prediction")?
                    .map(|v| binary("model_prediction", v))
                    .transpose()?,
                ground_truth: binary("ground_truth", num("ground_truth")?)?,
                elapsed_ms: num("elapsed_ms")?,
                served_at: time("served_at")?,
                submitted_at: time("submitted_at")?,
                client_dwell_ms: opt_num("client_dwell_ms")?,
                protected: protected
                    .iter()
                    .filter_map(|(i, f)| {
                        let v = rec.get(*i)?.trim();
                        (!v.is_empty()).then(|| (f.clone(), v.to_string()))
                    })
                    .collect(),
            });
        }
        Ok(rows)
    }

    /// Survey rows keyed by question id, one column per question in bank
    /// order, then `demographic:<key>` columns.
    pub fn write_surveys_csv<W: Write>(&self, w: W, bank: &SurveyBank) -> Result<(), ExportError> {
        let mut questions: Vec<&String> = self
            .surveys
            .iter()
            .flat_map(|s| s.answers.keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        questions.sort_by_key(|q| (bank.position(q).unwrap_or(usize::MAX), (*q).clone()));
        let demographics: BTreeSet<&String> = self.surveys.iter().flat_map(|s| s.demographics.keys()).collect();
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["study", "session", "participant", "condition", "submitted_at"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(questions.iter().map(|q| q.to_string()));
        header.extend(demographics.iter().map(|d| format!("{DEMOGRAPHIC_PREFIX}{d}")));
        out.write_record(&header)?;
        for s in &self.surveys {
            let mut rec = vec![
                s.study_id.clone(),
                s.session_id.clone(),
                s.participant_id.clone(),
                s.condition.to_string(),
                timestamp(&s.submitted_at),
            ];
            rec.extend(questions.iter().map(|q| opt(s.answers.get(*q))));
            rec.extend(demographics.iter().map(|d| s.demographics.get(*d).cloned().unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_surveys_csv<R: Read>(r: R) -> Result<Vec<SurveyRow>, ExportError> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers()?.clone();
        let fixed = ["study", "session", "participant", "condition", "submitted_at"];
        let mut idx = BTreeMap::new();
        for c in fixed {
            let i = header.iter().position(|h| h == c).ok_or_else(|| ExportError::Invalid {
                row: 0,
                reason: format!("missing column `{c}`"),
            })?;
            idx.insert(c, i);
        }
        let mut rows = Vec::new();
        for (n, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = n + 1;
            let bad = |reason: String| ExportError::Invalid { row, reason };
            let get = |c: &str| rec.get(idx[c]).unwrap_or("").trim();
            let mut answers = BTreeMap::new();
            let mut demographics = BTreeMap::new();
            for (i, h) in header.iter().enumerate() {
                let v = rec.get(i).unwrap_or("").trim();
                if fixed.contains(&h) || v.is_empty() {
                    continue;
                }
                if let Some(key) = h.strip_prefix(DEMOGRAPHIC_PREFIX) {
                    demographics.insert(key.to_string(), v.to_string());
                } else {
                    let score = v.parse().map_err(|_| bad(format!("answer `{h}` = `{v}` is not an integer")))?;
                    answers.insert(h.to_string(), score);
                }
            }
            rows.push(SurveyRow {
                study_id: get("study").to_string(),
                session_id: get("session").to_string(),
                participant_id: get("participant").to_string(),
                condition: get("condition").parse().map_err(|e| bad(format!("{e}")))?,
                answers,
                demographics,
                submitted_at: DateTime::parse_from_rfc3339(get("submitted_at"))
                    .map(|t| t.with_timezone(&Utc))
                    .map_err(|e| bad(format!("submitted_at: {e}")))?,
            });
        }
        Ok(rows)
    }

    /// Writes `<stem>.decisions.csv`, `<stem>.surveys.csv` and
    /// `<stem>.exclusions.json` next to each other.
    pub fn write_files(&self, stem: impl AsRef<Path>, bank: &SurveyBank) -> Result<ExportPaths, ExportError> {
        let paths = ExportPaths::for_stem(stem);
        self.write_decisions_csv(std::fs::File::create(&paths.decisions)?)?;
        self.write_surveys_csv(std::fs::File::create(&paths.surveys)?, bank)?;
        std::fs::write(
            &paths.exclusions,
            serde_json::to_string_pretty(&self.exclusions).expect("exclusions serialize"),
        )?;
        Ok(paths)
    }

    /// Reads whichever of the three files exist. The decisions file may also
    /// be given directly.
    pub fn read_files(path: impl AsRef<Path>) -> Result<Self, ExportError> {
        let path = path.as_ref();
        let paths = if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            let stem = name.strip_suffix(".decisions.csv").unwrap_or(name.strip_suffix(".csv").unwrap_or(&name));
            ExportPaths {
                decisions: path.to_path_buf(),
                ..ExportPaths::for_stem(path.with_file_name(stem))
            }
        } else {
            ExportPaths::for_stem(path)
        };
        let decisions = Self::read_decisions_csv(std::fs::File::open(&paths.decisions)?)?;
        let surveys = if paths.surveys.exists() {
            Self::read_surveys_csv(std::fs::File::open(&paths.surveys)?)?
        } else {
            Vec::new()
        };
        let exclusions = if paths.exclusions.exists() {
            serde_json::from_slice(&std::fs::read(&paths.exclusions)?).map_err(|e| ExportError::Invalid {
                row: 0,
                reason: e.to_string(),
            })?
        } else {
            Vec::new()
        };
        Ok(Self {
            decisions,
            surveys,
            exclusions,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportPaths {
    pub decisions: std::path::PathBuf,
    pub surveys: std::path::PathBuf,
    pub exclusions: std::path::PathBuf,
}

impl ExportPaths {
    pub fn for_stem(stem: impl AsRef<Path>) -> Self {
        let s = stem.as_ref().display().to_string();
        Self {
            decisions: format!("{s}.decisions.csv").into(),
            surveys: format!("{s}.surveys.csv").into(),
            exclusions: format!("{s}.exclusions.json").into(),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn row(condition: Condition, human: u8, ai: Option<u8>, truth: u8) -> DecisionRow {
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        DecisionRow {
            study_id: "st".into(),
            session_id: "se".into(),
            participant_id: "p".into(),
            condition,
            task_index: 0,
            instance_id: "i".into(),
            human_decision: human,
            ai_prediction: ai,
            model_prediction: ai.or(Some(1)),
            ground_truth: truth,
            elapsed_ms: 5000,
            served_at: t,
            submitted_at: t + chrono::Duration::milliseconds(5000),
            client_dwell_ms: None,
            protected: BTreeMap::new(),
        }
    }

    #[test]
    fn decisions_round_trip() {
        let mut a = row(Condition::F, 1, None, 0);
        a.protected.insert("sex".into(), "female".into());
        a.client_dwell_ms = Some(4900);
        let mut b = row(Condition::FpeShap, 0, Some(1), 1);
        b.task_index = 3;
        b.instance_id = "with,comma".into();
        let set = ResponseSet {
            decisions: vec![a, b],
            ..Default::default()
        };
        let mut buf = Vec::new();
        set.write_decisions_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("study,session,participant,condition,task_index,instance,human_decision,ai_prediction"));
        assert!(text.lines().nth(1).unwrap().contains(",F,0,i,1,,1,0,5000,"));
        assert_eq!(ResponseSet::read_decisions_csv(buf.as_slice()).unwrap(), set.decisions);
    }

    #[test]
    fn surveys_round_trip_in_bank_order() {
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let answers: BTreeMap<String, u8> = (1..=16).map(|i| (format!("Q{i}"), (i % 5 + 1) as u8)).collect();
        let set = ResponseSet {
            surveys: vec![SurveyRow {
                study_id: "st".into(),
                session_id: "se".into(),
                participant_id: "p".into(),
                condition: Condition::FpeLime,
                answers,
                demographics: [("age".to_string(), "30-39".to_string())].into(),
                submitted_at: t,
            }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        set.write_surveys_csv(&mut buf, &SurveyBank::bundled()).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap().lines().next().unwrap().to_string();
        assert!(header.contains("Q1,Q2,Q3,Q4,Q5,Q6,Q7,Q8,Q9,Q10,Q11"));
        assert_eq!(ResponseSet::read_surveys_csv(buf.as_slice()).unwrap(), set.surveys);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = ResponseSet {
            decisions: vec![row(Condition::Fp, 1, Some(1), 1)],
            surveys: vec![],
            exclusions: vec![Exclusion {
                session_id: "s2".into(),
                participant_id: "p2".into(),
                phase: Phase::Disqualified,
                reason: "failed attention check".into(),
            }],
        };
        let paths = set.write_files(dir.path().join("study"), &SurveyBank::bundled()).unwrap();
        assert_eq!(ResponseSet::read_files(dir.path().join("study")).unwrap(), set);
        assert_eq!(ResponseSet::read_files(&paths.decisions).unwrap(), set);
    }
}
