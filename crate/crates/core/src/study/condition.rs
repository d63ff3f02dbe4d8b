use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::explain::Method;

/// What participants see next to the feature table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Features only.
    #[serde(rename = "F")]
    F,
    /// Features and the AI prediction.
    #[serde(rename = "FP")]
    Fp,
    #[serde(rename = "FPE-LIME")]
    FpeLime,
    #[serde(rename = "FPE-SHAP")]
    FpeShap,
    #[serde(rename = "FPE-SG")]
    FpeSg,
    #[serde(rename = "FPE-IG")]
    FpeIg,
    #[serde(rename = "FPE-GRAD")]
    FpeGrad,
    #[serde(rename = "FPE-GI")]
    FpeGi,
}

/// Conditions grouped by the content they show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConditionClass {
    F,
    FP,
    FPE,
}

impl Condition {
    pub const ALL: [Condition; 8] = [
        Condition::F,
        Condition::Fp,
        Condition::FpeLime,
        Condition::FpeShap,
        Condition::FpeSg,
        Condition::FpeIg,
        Condition::FpeGrad,
        Condition::FpeGi,
    ];

    /// The six conditions of the benchmark study.
    pub const BENCHMARK: [Condition; 6] = [
        Condition::F,
        Condition::Fp,
        Condition::FpeLime,
        Condition::FpeShap,
        Condition::FpeSg,
        Condition::FpeIg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::F => "F",
            Condition::Fp => "FP",
            Condition::FpeLime => "FPE-LIME",
            Condition::FpeShap => "FPE-SHAP",
            Condition::FpeSg => "FPE-SG",
            Condition::FpeIg => "FPE-IG",
            Condition::FpeGrad => "FPE-GRAD",
            Condition::FpeGi => "FPE-GI",
        }
    }

    pub fn class(self) -> ConditionClass {
        match self {
            Condition::F => ConditionClass::F,
            Condition::Fp => ConditionClass::FP,
            _ => ConditionClass::FPE,
        }
    }

    pub fn shows_prediction(self) -> bool {
        self != Condition::F
    }

    /// The explainer whose output is shown, for FPE conditions.
    pub fn method(self) -> Option<Method> {
        match self {
            Condition::F | Condition::Fp => None,
            Condition::FpeLime => Some(Method::Lime),
            Condition::FpeShap => Some(Method::KernelShap),
            Condition::FpeSg => Some(Method::Smoothgrad),
            Condition::FpeIg => Some(Method::IntegratedGradients),
            Condition::FpeGrad => Some(Method::Grad),
            Condition::FpeGi => Some(Method::GradXInput),
        }
    }

    /// Short explainer name used in chart captions.
    pub fn method_label(self) -> Option<&'static str> {
        match self {
            Condition::FpeLime => Some("LIME"),
            Condition::FpeShap => Some("SHAP"),
            Condition::FpeSg => Some("SmoothGrad"),
            Condition::FpeIg => Some("Integrated Gradients"),
            Condition::FpeGrad => Some("Vanilla Gradients"),
            Condition::FpeGi => Some("Gradient x Input"),
            _ => None,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown condition `{0}`")]
pub struct UnknownCondition(pub String);

impl FromStr for Condition {
    type Err = UnknownCondition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownCondition(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
            assert_eq!(c.method().is_some(), c.class() == ConditionClass::FPE);
        }
        assert!("FPE-XYZ".parse::<Condition>().is_err());
    }
}
