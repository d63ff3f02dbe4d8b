use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{explain, DifferentiableModel, ExplainerConfig, Method};
use crate::clock::Clock;
use crate::data::{Encoder, Instance};
use crate::exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    pub score: f64,
}

/// One stored explanation. Serialized one per line in JSONL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub instance_id: String,
    pub method: Method,
    pub config_fingerprint: String,
    pub model_fingerprint: String,
    pub predicted_label: u8,
    pub predicted_probability: f64,
    /// Per codebook feature, in codebook order.
    pub feature_scores: Vec<FeatureScore>,
    pub column_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
    pub created_at: DateTime<Utc>,
}

impl ExplanationRecord {
    pub fn key(&self) -> (String, Method, String, String) {
        (
            self.instance_id.clone(),
            self.method,
            self.config_fingerprint.clone(),
            self.model_fingerprint.clone(),
        )
    }

    /// Features sorted by descending absolute score, ties by name.
    pub fn ranked(&self) -> Vec<&FeatureScore> {
        let mut v: Vec<_> = self.feature_scores.iter().collect();
        v.sort_by(|a, b| b.score.abs().total_cmp(&a.score.abs()).then_with(|| a.feature.cmp(&b.feature)));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub records: Vec<ExplanationRecord>,
    pub failures: Vec<PrecomputeFailure>,
}

impl ExplanationSet {
    pub fn get(&self, instance_id: &str, method: Method) -> Option<&ExplanationRecord> {
        self.records
            .iter()
            .find(|r| r.instance_id == instance_id && r.method == method)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: std::io::Read>(r: R) -> std::io::Result<Self> {
        let mut records = Vec::new();
        for line in BufReader::new(r).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self {
            records,
            failures: Vec::new(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }

    /// Writes `self` into the JSONL file at `path`, replacing records with
    /// the same key and keeping the rest. Records are sorted by key.
    pub fn upsert_into(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        let mut merged = BTreeMap::new();
        if path.exists() {
            for r in Self::load(path)?.records {
                merged.insert(r.key(), r);
            }
        }
        for r in &self.records {
            merged.insert(r.key(), r.clone());
        }
        let all = Self {
            records: merged.into_values().collect(),
            failures: Vec::new(),
        };
        let mut buf = Vec::new();
        all.write_jsonl(&mut buf)?;
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, buf)?;
        std::fs::rename(tmp, path)
    }
}

/// Explains every pool instance with `config`. Instances that fail to encode
/// or explain are listed in `failures`; the others still get records.
pub fn precompute_pool<M: DifferentiableModel + ?Sized>(
    model: &M,
    encoder: &Arc<Encoder>,
    pool: &[Instance],
    config: &ExplainerConfig,
    clock: &dyn Clock,
) -> ExplanationSet {
    let created_at = clock.now();
    let model_fingerprint = model.fingerprint();
    let config_fingerprint = config.fingerprint();
    let names = encoder.feature_names();
    let results = exec::map(config.execution, pool, |inst| {
        let x = encoder.encode(inst).map_err(|e| e.to_string())?;
        let a = explain(model, &x, config).map_err(|e| e.to_string())?;
        Ok::<_, String>(ExplanationRecord {
            instance_id: inst.id.clone(),
            method: config.method,
            config_fingerprint: config_fingerprint.clone(),
            model_fingerprint: model_fingerprint.clone(),
            predicted_label: a.predicted_label,
            predicted_probability: a.predicted_probability,
            feature_scores: names
                .iter()
                .zip(&a.feature_scores)
                .map(|(f, s)| FeatureScore {
                    feature: f.clone(),
                    score: *s,
                })
                .collect(),
            column_scores: a.scores,
            base_value: a.base_value,
            created_at,
        })
    });
    let mut set = ExplanationSet::default();
    for (inst, r) in pool.iter().zip(results) {
        match r {
            Ok(rec) => set.records.push(rec),
            Err(error) => set.failures.push(PrecomputeFailure {
                instance_id: inst.id.clone(),
                error,
            }),
        }
    }
    set
}
