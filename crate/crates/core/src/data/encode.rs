use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Codebook, DataError, Dataset, FeatureKind, Instance, Split, Value};

/// Encoded columns belonging to one codebook feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGroup {
    pub feature: String,
    pub kind: FeatureKind,
    pub start: usize,
    pub width: usize,
    /// Category names for one-hot groups, in column order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnGroup {
    pub fn columns(&self) -> Range<usize> {
        self.start..self.start + self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

/// Maps instances into model space: numeric features are z-scored with train
/// statistics, categoricals one-hot encoded, binaries kept as 0/1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub groups: Vec<ColumnGroup>,
    pub scaler: Vec<ColumnScale>,
    /// Train medians used to impute missing numeric values, by feature.
    pub imputation: BTreeMap<String, f64>,
    pub codebook_hash: String,
}

/// An instance in model space, tied to the encoder that produced it.
#[derive(Debug, Clone)]
pub struct EncodedVector {
    pub instance_id: String,
    pub values: Vec<f64>,
    pub encoder: Arc<Encoder>,
}

impl EncodedVector {
    /// Wraps a raw vector with an identity encoder whose features are the
    /// columns themselves (`x1`, `x2`, ...).
    pub fn raw(values: Vec<f64>) -> Self {
        let encoder = Arc::new(Encoder::identity(values.len()));
        Self {
            instance_id: String::new(),
            values,
            encoder,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.instance_id = id.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl Encoder {
    /// Fits scaling statistics on the train split only.
    pub fn fit(dataset: &Dataset) -> Result<Self, DataError> {
        let train = dataset.part(Split::Train).map_err(|_| DataError::UnfittedScaler)?;
        Self::fit_on(&dataset.codebook, &train)
    }

    /// Fits on an explicit set of instances. Used by [`Encoder::fit`] and by
    /// leakage checks that deliberately refit on other data.
    pub fn fit_on(codebook: &Codebook, rows: &[&Instance]) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::UnfittedScaler);
        }
        let mut groups = Vec::new();
        let mut scaler = Vec::new();
        let mut imputation = BTreeMap::new();
        let mut start = 0;
        for spec in &codebook.features {
            let width = match spec.kind {
                FeatureKind::Categorical => spec.categories.len(),
                _ => 1,
            };
            match spec.kind {
                FeatureKind::Numeric => {
                    let mut observed: Vec<f64> = rows
                        .iter()
                        .filter_map(|r| match r.values.get(&spec.name) {
                            Some(Value::Number(v)) => Some(*v),
                            _ => None,
                        })
                        .collect();
                    let (mean, std, median) = if observed.is_empty() {
                        (0.0, 1.0, 0.0)
                    } else {
                        let n = observed.len() as f64;
                        let mean = observed.iter().sum::<f64>() / n;
                        let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        observed.sort_by(f64::total_cmp);
                        let mid = observed.len() / 2;
                        let median = if observed.len() % 2 == 0 {
                            0.5 * (observed[mid - 1] + observed[mid])
                        } else {
                            observed[mid]
                        };
                        // Constant columns keep unit scale so the encoding stays finite.
                        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                        (mean, std, median)
                    };
                    scaler.push(ColumnScale { mean, std });
                    imputation.insert(spec.name.clone(), median);
                }
                _ => scaler.extend((0..width).map(|_| ColumnScale { mean: 0.0, std: 1.0 })),
            }
            groups.push(ColumnGroup {
                feature: spec.name.clone(),
                kind: spec.kind,
                start,
                width,
                categories: if spec.kind == FeatureKind::Categorical {
                    spec.categories.clone()
                } else {
                    Vec::new()
                },
            });
            start += width;
        }
        Ok(Self {
            groups,
            scaler,
            imputation,
            codebook_hash: codebook.fingerprint(),
        })
    }

    /// Encoder over `d` plain numeric columns with unit scale.
    pub fn identity(d: usize) -> Self {
        Self {
            groups: (0..d)
                .map(|i| ColumnGroup {
                    feature: format!("x{}", i + 1),
                    kind: FeatureKind::Numeric,
                    start: i,
                    width: 1,
                    categories: Vec::new(),
                })
                .collect(),
            scaler: vec![ColumnScale { mean: 0.0, std: 1.0 }; d],
            imputation: BTreeMap::new(),
            codebook_hash: String::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.scaler.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.feature.clone()).collect()
    }

    /// One name per encoded column, `feature=category` for one-hot columns.
    pub fn column_names(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| {
                if g.categories.is_empty() {
                    vec![g.feature.clone()]
                } else {
                    g.categories.iter().map(|c| format!("{}={c}", g.feature)).collect()
                }
            })
            .collect()
    }

    pub fn encode_values(&self, instance: &Instance) -> Result<Vec<f64>, DataError> {
        let invalid = |reason: String| DataError::InvalidInstance {
            id: instance.id.clone(),
            reason,
        };
        if instance.values.len() != self.groups.len() {
            return Err(invalid("value keys do not match the encoder schema".into()));
        }
        let mut out = vec![0.0; self.dim()];
        for g in &self.groups {
            let value = instance
                .values
                .get(&g.feature)
                .ok_or_else(|| invalid(format!("missing feature `{}`", g.feature)))?;
            match (g.kind, value) {
                (FeatureKind::Numeric, v) => {
                    let raw = match v {
                        Value::Number(x) => *x,
                        Value::Missing => *self
                            .imputation
                            .get(&g.feature)
                            .ok_or_else(|| invalid(format!("no imputation for `{}`", g.feature)))?,
                        Value::Category(c) => {
                            return Err(invalid(format!("`{c}` given for numeric `{}`", g.feature)))
                        }
                    };
                    let s = self.scaler[g.start];
                    out[g.start] = (raw - s.mean) / s.std;
                }
                (FeatureKind::Binary, Value::Number(x)) => out[g.start] = *x,
                (FeatureKind::Categorical, Value::Category(c)) => {
                    let k = g
                        .categories
                        .iter()
                        .position(|cat| cat == c)
                        .ok_or_else(|| invalid(format!("unknown category `{c}` for `{}`", g.feature)))?;
                    out[g.start + k] = 1.0;
                }
                (_, v) => return Err(invalid(format!("value {v:?} invalid for `{}`", g.feature))),
            }
        }
        Ok(out)
    }

    pub fn encode(self: &Arc<Self>, instance: &Instance) -> Result<EncodedVector, DataError> {
        Ok(EncodedVector {
            instance_id: instance.id.clone(),
            values: self.encode_values(instance)?,
            encoder: Arc::clone(self),
        })
    }

    /// Recovers categorical values by argmax over each one-hot group.
    pub fn decode_categories(&self, values: &[f64]) -> BTreeMap<String, String> {
        self.groups
            .iter()
            .filter(|g| g.kind == FeatureKind::Categorical)
            .map(|g| {
                let block = &values[g.columns()];
                let best = block
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                (g.feature.clone(), g.categories[best].clone())
            })
            .collect()
    }

    /// Sums column scores into one score per feature, in codebook order.
    pub fn aggregate(&self, column_scores: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| column_scores[g.columns()].iter().sum())
            .collect()
    }
}

/// Convenience entry point mirroring the operation name.
pub fn encode_instance(encoder: &Arc<Encoder>, instance: &Instance) -> Result<EncodedVector, DataError> {
    encoder.encode(instance)
}
