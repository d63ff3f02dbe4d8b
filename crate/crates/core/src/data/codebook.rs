use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Value};
use crate::hashing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
    Binary,
}

/// Semantics of one input column as shown to participants.
///
/// Binary features take the raw values `0`/`1`. When two `categories` are
/// given for a binary feature they are its human-readable labels for 0 and 1,
/// and the data file may use either form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_explanation: Option<String>,
    /// Empty cells are accepted: numeric ones are imputed with the training
    /// median, categorical ones become the `missing` category.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_missing: bool,
}

pub const MISSING_CATEGORY: &str = "missing";

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
            unit: None,
            description: description.into(),
            long_explanation: None,
            allow_missing: false,
        }
    }

    pub fn categorical(
        name: impl Into<String>,
        description: impl Into<String>,
        categories: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            ..Self::numeric(name, description)
        }
    }

    pub fn binary(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            kind: FeatureKind::Binary,
            ..Self::numeric(name, description)
        }
    }

    /// Parses one raw cell. The error string explains the rejection.
    pub fn parse_cell(&self, raw: &str) -> Result<Value, String> {
        let cell = raw.trim();
        match self.kind {
            FeatureKind::Numeric => {
                if cell.is_empty() {
                    return if self.allow_missing {
                        Ok(Value::Missing)
                    } else {
                        Err("empty numeric value".into())
                    };
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Value::Number(v)),
                    _ => Err(format!("`{cell}` is not a finite number")),
                }
            }
            FeatureKind::Binary => match cell {
                "0" => Ok(Value::Number(0.0)),
                "1" => Ok(Value::Number(1.0)),
                other => match self.categories.iter().position(|c| c == other) {
                    Some(i) => Ok(Value::Number(i as f64)),
                    None => Err(format!("`{other}` is not 0, 1 or a declared label")),
                },
            },
            FeatureKind::Categorical => {
                let cell = if cell.is_empty() && self.allow_missing {
                    MISSING_CATEGORY
                } else {
                    cell
                };
                if self.categories.iter().any(|c| c == cell) {
                    Ok(Value::Category(cell.to_string()))
                } else {
                    Err(format!(
                        "unknown category `{cell}` (expected one of {})",
                        self.categories.join(", ")
                    ))
                }
            }
        }
    }

    /// Checks that an already-parsed value is admissible for this feature.
    pub fn check_value(&self, value: &Value) -> Result<(), String> {
        match (self.kind, value) {
            (FeatureKind::Numeric, Value::Number(v)) if v.is_finite() => Ok(()),
            (FeatureKind::Numeric, Value::Missing) if self.allow_missing => Ok(()),
            (FeatureKind::Binary, Value::Number(v)) if *v == 0.0 || *v == 1.0 => Ok(()),
            (FeatureKind::Categorical, Value::Category(c)) if self.categories.contains(c) => {
                Ok(())
            }
            (_, v) => Err(format!("value {v:?} is not valid for {:?} feature", self.kind)),
        }
    }

    /// Human-readable rendering used in task pages and for group matching.
    pub fn display(&self, value: &Value) -> String {
        match (self.kind, value) {
            (FeatureKind::Binary, Value::Number(v)) if self.categories.len() == 2 => {
                self.categories[usize::from(*v != 0.0)].clone()
            }
            (_, Value::Number(v)) => format!("{v}"),
            (_, Value::Category(c)) => c.clone(),
            (_, Value::Missing) => MISSING_CATEGORY.to_string(),
        }
    }

    /// Cell text written back to a data file; parses to the same value.
    pub fn to_cell(&self, value: &Value) -> String {
        match value {
            Value::Number(v) => format!("{v}"),
            Value::Category(c) => c.clone(),
            Value::Missing => String::new(),
        }
    }
}

/// A protected attribute and the two groups compared by fairness metrics.
/// Group values are compared against [`FeatureSpec::display`] output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedAttribute {
    pub feature: String,
    pub minority: String,
    pub majority: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Minority,
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub dataset_name: String,
    pub features: Vec<FeatureSpec>,
    pub label_name: String,
    /// What label 1 means, e.g. "good credit risk". Label 1 is the positive
    /// class for F1 and true-positive rates.
    pub positive_label_meaning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_label_meaning: Option<String>,
    #[serde(default)]
    pub protected_attributes: Vec<ProtectedAttribute>,
    /// Order of rows in the participant-facing feature table.
    #[serde(default)]
    pub display_order: Vec<String>,
}

impl Codebook {
    /// Reads a codebook from JSON, or TOML when the extension is `.toml`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut codebook: Codebook = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| DataError::Codebook(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| DataError::Codebook(e.to_string()))?
        };
        if codebook.display_order.is_empty() {
            codebook.display_order = codebook.features.iter().map(|f| f.name.clone()).collect();
        }
        codebook.validate()?;
        Ok(codebook)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebook serializes")
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |msg: String| Err(DataError::Codebook(msg));
        let mut names = BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return err(format!("duplicate feature name `{}`", f.name));
            }
            match f.kind {
                FeatureKind::Categorical => {
                    let unique: BTreeSet<_> = f.categories.iter().collect();
                    if f.categories.len() < 2 || unique.len() != f.categories.len() {
                        return err(format!(
                            "categorical feature `{}` needs at least two distinct categories",
                            f.name
                        ));
                    }
                    if f.allow_missing && !f.categories.iter().any(|c| c == MISSING_CATEGORY) {
                        return err(format!(
                            "feature `{}` allows missing values but has no `{MISSING_CATEGORY}` category",
                            f.name
                        ));
                    }
                }
                FeatureKind::Binary => {
                    if !(f.categories.is_empty() || f.categories.len() == 2) {
                        return err(format!("binary feature `{}` takes zero or two labels", f.name));
                    }
                }
                FeatureKind::Numeric => {
                    if !f.categories.is_empty() {
                        return err(format!("numeric feature `{}` lists categories", f.name));
                    }
                }
            }
        }
        if names.contains(self.label_name.as_str()) || self.label_name == "id" {
            return err(format!("label column `{}` clashes with a feature", self.label_name));
        }
        if names.contains("id") || names.contains("split") {
            return err("`id` and `split` are reserved column names".into());
        }
        let order: BTreeSet<_> = self.display_order.iter().map(String::as_str).collect();
        if order != names || self.display_order.len() != self.features.len() {
            return err("display_order must be a permutation of the feature names".into());
        }
        for pa in &self.protected_attributes {
            let Some(spec) = self.feature(&pa.feature) else {
                return err(format!("protected attribute `{}` is not a feature", pa.feature));
            };
            if pa.minority == pa.majority {
                return err(format!("protected attribute `{}` has identical groups", pa.feature));
            }
            for group in [&pa.minority, &pa.majority] {
                let known = match spec.kind {
                    FeatureKind::Categorical => spec.categories.contains(group),
                    FeatureKind::Binary => {
                        group == "0" || group == "1" || spec.categories.contains(group)
                    }
                    FeatureKind::Numeric => true,
                };
                if !known {
                    return err(format!(
                        "protected group `{group}` is not a value of `{}`",
                        pa.feature
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn protected(&self, name: &str) -> Option<&ProtectedAttribute> {
        self.protected_attributes.iter().find(|p| p.feature == name)
    }

    /// Which fairness group a display value belongs to, if any. Binary
    /// features match either their label or the raw `0`/`1`.
    pub fn group_of(&self, attribute: &ProtectedAttribute, value: &Value) -> Option<Group> {
        let spec = self.feature(&attribute.feature)?;
        let shown = spec.display(value);
        let raw = spec.to_cell(value);
        let matches = |g: &str| g == shown || g == raw;
        if matches(&attribute.minority) {
            Some(Group::Minority)
        } else if matches(&attribute.majority) {
            Some(Group::Majority)
        } else {
            None
        }
    }

    pub fn label_meaning(&self, label: u8) -> String {
        if label == 1 {
            self.positive_label_meaning.clone()
        } else {
            self.negative_label_meaning
                .clone()
                .unwrap_or_else(|| format!("not {}", self.positive_label_meaning))
        }
    }

    pub fn fingerprint(&self) -> String {
        hashing::fingerprint(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> Codebook {
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
            protected_attributes: vec![ProtectedAttribute {
                feature: "flag".into(),
                minority: "1".into(),
                majority: "0".into(),
            }],
            display_order: vec!["kind".into(), "age".into(), "flag".into()],
        }
    }

    #[test]
    fn valid_codebook_passes() {
        tiny().validate().unwrap();
    }

    #[test]
    fn display_order_must_be_permutation() {
        let mut cb = tiny();
        cb.display_order.pop();
        assert!(matches!(cb.validate(), Err(DataError::Codebook(_))));
        cb.display_order = vec!["kind".into(), "age".into(), "age".into()];
        assert!(cb.validate().is_err());
    }

    #[test]
    fn protected_attribute_must_exist() {
        let mut cb = tiny();
        cb.protected_attributes[0].feature = "gender".into();
        assert!(cb.validate().is_err());
    }

    #[test]
    fn categorical_needs_two_categories() {
        let mut cb = tiny();
        cb.features[1].categories = vec!["A".into()];
        assert!(cb.validate().is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut cb = tiny();
        cb.features[2].name = "age".into();
        assert!(cb.validate().is_err());
    }

    #[test]
    fn binary_labels_parse_and_display() {
        let mut spec = FeatureSpec::binary("sex", "Sex");
        spec.categories = vec!["male".into(), "female".into()];
        assert_eq!(spec.parse_cell("female").unwrap(), Value::Number(1.0));
        assert_eq!(spec.parse_cell("0").unwrap(), Value::Number(0.0));
        assert_eq!(spec.display(&Value::Number(1.0)), "female");
        assert!(spec.parse_cell("other").is_err());
    }

    #[test]
    fn group_matching_accepts_raw_binary() {
        let cb = tiny();
        let pa = &cb.protected_attributes[0];
        assert_eq!(cb.group_of(pa, &Value::Number(1.0)), Some(Group::Minority));
        assert_eq!(cb.group_of(pa, &Value::Number(0.0)), Some(Group::Majority));
    }
}
