//! Tabular decision datasets described by human-readable codebooks.

mod codebook;
mod encode;
mod sampling;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codebook::{
    Codebook, FeatureKind, FeatureSpec, Group, ProtectedAttribute, MISSING_CATEGORY,
};
pub use encode::{encode_instance, ColumnGroup, ColumnScale, EncodedVector, Encoder};
pub use sampling::{draw_participant_tasks, sample_study_pool, split_dataset, DEFAULT_TEST_FRACTION};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid codebook: {0}")]
    Codebook(String),
    #[error("column `{column}`: {reason}")]
    SchemaMismatch { column: String, reason: String },
    #[error("row {row}, feature `{feature}`: {reason}")]
    InvalidValue {
        row: usize,
        feature: String,
        value: String,
        reason: String,
    },
    #[error("row {row}: missing or invalid label `{value}`")]
    InvalidLabel { row: usize, value: String },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("malformed data file: {0}")]
    Csv(#[from] csv::Error),
    #[error("test fraction {0} is outside (0, 1)")]
    TestFraction(f64),
    #[error("need at least {needed} instances, dataset has {actual}")]
    TooFewInstances { needed: usize, actual: usize },
    #[error("dataset has no train/test split")]
    NoSplit,
    #[error("scaler has not been fitted on a train split")]
    UnfittedScaler,
    #[error("requested {requested} instances but only {available} are available")]
    NotEnoughInstances { requested: usize, available: usize },
    #[error("instance `{id}`: {reason}")]
    InvalidInstance { id: String, reason: String },
    #[error("true_weights has length {actual}, expected {expected}")]
    WeightLength { expected: usize, actual: usize },
}

/// A parsed cell value. Binary features are stored as `Number(0|1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub values: BTreeMap<String, Value>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub codebook: Codebook,
    pub instances: Vec<Instance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<BTreeMap<String, Split>>,
}

impl Dataset {
    /// Builds a dataset, validating every instance against the codebook.
    pub fn new(codebook: Codebook, instances: Vec<Instance>) -> Result<Self, DataError> {
        codebook.validate()?;
        let mut ids = BTreeSet::new();
        for inst in &instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(DataError::DuplicateId(inst.id.clone()));
            }
            validate_instance(&codebook, inst)?;
        }
        Ok(Self {
            codebook,
            instances,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Instances of one side of the split, in dataset order.
    pub fn part(&self, which: Split) -> Result<Vec<&Instance>, DataError> {
        let split = self.split.as_ref().ok_or(DataError::NoSplit)?;
        Ok(self
            .instances
            .iter()
            .filter(|i| split.get(&i.id) == Some(&which))
            .collect())
    }

    /// Reads a delimited file whose header matches the codebook. An `id`
    /// column is optional (row numbers are used otherwise); a `split` column
    /// restores a saved train/test assignment.
    pub fn read_csv<R: Read>(codebook: Codebook, reader: R) -> Result<Self, DataError> {
        codebook.validate()?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut column_of = BTreeMap::new();
        for (i, h) in headers.iter().enumerate() {
            let known = h == "id"
                || h == "split"
                || h == codebook.label_name
                || codebook.feature(h).is_some();
            if !known {
                return Err(DataError::SchemaMismatch {
                    column: h.to_string(),
                    reason: "not declared in the codebook".into(),
                });
            }
            if column_of.insert(h.to_string(), i).is_some() {
                return Err(DataError::SchemaMismatch {
                    column: h.to_string(),
                    reason: "appears twice in the header".into(),
                });
            }
        }
        for required in codebook
            .features
            .iter()
            .map(|f| f.name.as_str())
            .chain([codebook.label_name.as_str()])
        {
            if !column_of.contains_key(required) {
                return Err(DataError::SchemaMismatch {
                    column: required.to_string(),
                    reason: "missing from the header".into(),
                });
            }
        }

        let mut instances = Vec::new();
        let mut split = column_of.contains_key("split").then(BTreeMap::new);
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let row = idx + 1;
            let cell = |name: &str| record.get(column_of[name]).unwrap_or("");
            let id = if column_of.contains_key("id") {
                cell("id").trim().to_string()
            } else {
                format!("{row}")
            };
            let label_raw = cell(&codebook.label_name).trim();
            let label = match label_raw {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(DataError::InvalidLabel {
                        row,
                        value: label_raw.to_string(),
                    })
                }
            };
            let mut values = BTreeMap::new();
            for spec in &codebook.features {
                let raw = cell(&spec.name);
                let value = spec.parse_cell(raw).map_err(|reason| DataError::InvalidValue {
                    row,
                    feature: spec.name.clone(),
                    value: raw.to_string(),
                    reason,
                })?;
                values.insert(spec.name.clone(), value);
            }
            if let Some(split) = split.as_mut() {
                let side = match cell("split").trim() {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => {
                        return Err(DataError::SchemaMismatch {
                            column: "split".into(),
                            reason: format!("row {row}: `{other}` is neither train nor test"),
                        })
                    }
                };
                split.insert(id.clone(), side);
            }
            instances.push(Instance { id, values, label });
        }
        let mut dataset = Dataset::new(codebook, instances)?;
        dataset.split = split;
        Ok(dataset)
    }

    /// Writes the dataset with `id`, feature columns in codebook order, the
    /// label and, when present, the split assignment.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.codebook.features.iter().map(|f| f.name.clone()));
        header.push(self.codebook.label_name.clone());
        if self.split.is_some() {
            header.push("split".into());
        }
        wtr.write_record(&header)?;
        for inst in &self.instances {
            let mut row = vec![inst.id.clone()];
            for spec in &self.codebook.features {
                row.push(spec.to_cell(&inst.values[&spec.name]));
            }
            row.push(inst.label.to_string());
            if let Some(split) = &self.split {
                row.push(
                    match split.get(&inst.id) {
                        Some(Split::Train) => "train",
                        Some(Split::Test) => "test",
                        None => "",
                    }
                    .to_string(),
                );
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|source| DataError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Loads a data file and its codebook.
pub fn load_dataset(
    data_path: impl AsRef<Path>,
    codebook_path: impl AsRef<Path>,
) -> Result<Dataset, DataError> {
    let codebook = Codebook::from_path(codebook_path)?;
    let path = data_path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Dataset::read_csv(codebook, std::io::BufReader::new(file))
}

pub(crate) fn validate_instance(codebook: &Codebook, inst: &Instance) -> Result<(), DataError> {
    let invalid = |reason: String| DataError::InvalidInstance {
        id: inst.id.clone(),
        reason,
    };
    if inst.label > 1 {
        return Err(invalid(format!("label {} is not binary", inst.label)));
    }
    if inst.values.len() != codebook.features.len() {
        return Err(invalid("value keys do not match the codebook features".into()));
    }
    for spec in &codebook.features {
        let value = inst
            .values
            .get(&spec.name)
            .ok_or_else(|| invalid(format!("missing feature `{}`", spec.name)))?;
        spec.check_value(value)
            .map_err(|reason| invalid(format!("feature `{}`: {reason}", spec.name)))?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_codebook() -> Codebook {
        Codebook {
            dataset_name: "tiny".into(),
            features: vec![
                FeatureSpec::numeric("age", "Age in years"),
                FeatureSpec::categorical("kind", "Kind", ["A", "B"]),
                FeatureSpec::binary("flag", "Flag"),
            ],
            label_name: "label".into(),
            positive_label_meaning: "approved".into(),
            negative_label_meaning: None,
            protected_attributes: vec![],
            display_order: vec!["age".into(), "kind".into(), "flag".into()],
        }
    }

    const TINY: &str = "age,kind,flag,label\n30,A,0,1\n41.5,B,1,0\n22,A,1,0\n57,B,0,1\n";

    #[test]
    fn loads_matching_file() {
        let ds = Dataset::read_csv(tiny_codebook(), TINY.as_bytes()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.instances[1].values["age"], Value::Number(41.5));
        assert_eq!(ds.instances[1].id, "2");
        assert_eq!(ds.instances[3].label, 1);
    }

    #[test]
    fn unknown_category_names_feature_and_row() {
        let data = "age,kind,flag,label\n30,A,0,1\n41,Z,1,0\n";
        match Dataset::read_csv(tiny_codebook(), data.as_bytes()) {
            Err(DataError::InvalidValue {
                row,
                feature,
                value,
                ..
            }) => {
                assert_eq!(row, 2);
                assert_eq!(feature, "kind");
                assert_eq!(value, "Z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_names_column() {
        let data = "age,kind,colour,label\n30,A,red,1\n";
        match Dataset::read_csv(tiny_codebook(), data.as_bytes()) {
            Err(DataError::SchemaMismatch { column, .. }) => assert_eq!(column, "colour"),
            other => panic!("unexpected {other:?}"),
        }
        let data = "age,kind,label\n30,A,1\n";
        match Dataset::read_csv(tiny_codebook(), data.as_bytes()) {
            Err(DataError::SchemaMismatch { column, .. }) => assert_eq!(column, "flag"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_label_rejected() {
        let data = "age,kind,flag,label\n30,A,0,\n";
        assert!(matches!(
            Dataset::read_csv(tiny_codebook(), data.as_bytes()),
            Err(DataError::InvalidLabel { row: 1, .. })
        ));
    }

    #[test]
    fn missing_values_only_where_allowed() {
        let data = "age,kind,flag,label\n,A,0,1\n";
        assert!(Dataset::read_csv(tiny_codebook(), data.as_bytes()).is_err());
        let mut cb = tiny_codebook();
        cb.features[0].allow_missing = true;
        cb.features[1].allow_missing = true;
        cb.features[1].categories.push(MISSING_CATEGORY.into());
        let data = "age,kind,flag,label\n,,0,1\n";
        let ds = Dataset::read_csv(cb, data.as_bytes()).unwrap();
        assert_eq!(ds.instances[0].values["age"], Value::Missing);
        assert_eq!(ds.instances[0].values["kind"], Value::Category("missing".into()));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let data = "id,age,kind,flag,label\na,30,A,0,1\na,31,B,0,1\n";
        assert!(matches!(
            Dataset::read_csv(tiny_codebook(), data.as_bytes()),
            Err(DataError::DuplicateId(_))
        ));
    }

    #[test]
    fn split_column_round_trips() {
        let data: String = std::iter::once("age,kind,flag,label".to_string())
            .chain((0..20).map(|i| format!("{i},A,{},{}", i % 2, (i / 2) % 2)))
            .collect::<Vec<_>>()
            .join("\n");
        let ds = Dataset::read_csv(tiny_codebook(), data.as_bytes()).unwrap();
        let ds = split_dataset(&ds, 0.25, 3).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(tiny_codebook(), buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }
}
