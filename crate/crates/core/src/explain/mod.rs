//! Post hoc feature attributions.
//!
//! Six methods are available: vanilla gradients, gradient times input,
//! SmoothGrad, Integrated Gradients, LIME and KernelSHAP. The exact Shapley
//! enumeration in [`exact_shapley_oracle`] is the reference KernelSHAP is
//! checked against.
//!
//! All methods work in encoded space and report one score per encoded
//! column. [`Attribution::feature_scores`] sums the columns of each codebook
//! feature, so a one-hot group yields a single score.

mod gradient;
mod lime;
mod precompute;
mod shap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::EncodedVector;
use crate::exec::Execution;
use crate::hashing;
use crate::model::{Prediction, Target, TrainedModel};

pub use gradient::{gradient_x_input, integrated_gradients, smoothgrad, vanilla_gradient};
pub use lime::{fit_weighted_ridge, lime};
pub use precompute::{
    precompute_pool, ExplanationRecord, ExplanationSet, FeatureScore, PrecomputeFailure,
};
pub use shap::{exact_shapley_oracle, kernel_shap, MAX_EXACT_PLAYERS, MAX_ORACLE_PLAYERS};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("invalid explainer config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("non-finite gradient at SmoothGrad sample {sample}")]
    NonFiniteGradient { sample: usize },
    #[error("weighted least-squares system is singular; use a ridge penalty > 0")]
    Singular,
    #[error("KernelSHAP needs a non-empty background set")]
    EmptyBackground,
    #[error("{players} players exceed the enumeration limit of {max}")]
    TooManyPlayers { players: usize, max: usize },
    #[error("LIME needs at least {needed} samples, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },
}

/// A scalar differentiable classifier the explainers can query.
pub trait DifferentiableModel: Sync {
    fn input_dim(&self) -> usize;
    fn output(&self, x: &[f64], target: Target) -> f64;
    fn gradient(&self, x: &[f64], target: Target) -> Vec<f64>;
    fn predict(&self, x: &[f64]) -> Prediction;
    fn fingerprint(&self) -> String {
        String::new()
    }
    /// Points in `(0, 1)`, ascending, where the gradient along the segment
    /// from `from` to `to` jumps. Smooth models have none.
    fn path_breakpoints(&self, _from: &[f64], _to: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

impl DifferentiableModel for TrainedModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output(&self, x: &[f64], target: Target) -> f64 {
        self.output_unchecked(x, target)
    }

    fn gradient(&self, x: &[f64], target: Target) -> Vec<f64> {
        self.gradient_unchecked(x, target)
    }

    fn predict(&self, x: &[f64]) -> Prediction {
        self.predict_values(x).expect("dimension checked by caller")
    }

    fn fingerprint(&self) -> String {
        self.train_fingerprint.clone()
    }

    fn path_breakpoints(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        TrainedModel::path_breakpoints(self, from, to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grad,
    GradXInput,
    Smoothgrad,
    IntegratedGradients,
    Lime,
    KernelShap,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Grad,
        Method::GradXInput,
        Method::Smoothgrad,
        Method::IntegratedGradients,
        Method::Lime,
        Method::KernelShap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Grad => "grad",
            Method::GradXInput => "grad_x_input",
            Method::Smoothgrad => "smoothgrad",
            Method::IntegratedGradients => "integrated_gradients",
            Method::Lime => "lime",
            Method::KernelShap => "kernel_shap",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ExplainError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// How KernelSHAP chooses coalitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    /// Enumerate all coalitions when that fits in the sample budget.
    #[default]
    Auto,
    /// Always enumerate; fails above [`MAX_EXACT_PLAYERS`].
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub method: Method,
    #[serde(default)]
    pub target: Target,
    /// Integrated Gradients baseline; the zero vector when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<f64>>,
    pub sg_sigma: f64,
    /// Per-column multiplier of `sg_sigma`, typically the column range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sg_noise_scale: Option<Vec<f64>>,
    pub sg_samples: usize,
    pub ig_steps: usize,
    /// Split midpoint cells at gradient discontinuities along the path.
    #[serde(default = "yes")]
    pub ig_split_kinks: bool,
    pub lime_samples: usize,
    /// Defaults to `0.75 * sqrt(d)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lime_kernel_width: Option<f64>,
    pub lime_ridge: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shap_background: Vec<Vec<f64>>,
    /// Defaults to `2d + 2048`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shap_coalition_samples: Option<usize>,
    #[serde(default)]
    pub shap_mode: ShapMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_SHAP_BACKGROUND: usize = 100;

impl ExplainerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            target: Target::Logit,
            baseline: None,
            sg_sigma: 0.1,
            sg_noise_scale: None,
            sg_samples: 50,
            ig_steps: 256,
            ig_split_kinks: true,
            lime_samples: 1000,
            lime_kernel_width: None,
            lime_ridge: 1e-3,
            shap_background: Vec::new(),
            shap_coalition_samples: None,
            shap_mode: ShapMode::Auto,
            seed: 0,
            execution: Execution::default(),
        }
    }

    /// Fills the data-dependent defaults from encoded training rows: the IG
    /// baseline is the training mean, SmoothGrad noise scales with each
    /// column's range and the KernelSHAP background is 100 sampled rows.
    pub fn with_training_defaults(method: Method, train_rows: &[Vec<f64>], seed: u64) -> Self {
        use rand::SeedableRng;
        let mut cfg = Self::new(method);
        cfg.seed = seed;
        if let Some(first) = train_rows.first() {
            let d = first.len();
            let n = train_rows.len() as f64;
            let mut mean = vec![0.0; d];
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for row in train_rows {
                for j in 0..d {
                    mean[j] += row[j] / n;
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
            cfg.baseline = Some(mean);
            cfg.sg_noise_scale = Some(lo.iter().zip(&hi).map(|(l, h)| h - l).collect());
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = DEFAULT_SHAP_BACKGROUND.min(train_rows.len());
            cfg.shap_background = rand::seq::index::sample(&mut rng, train_rows.len(), k)
                .into_iter()
                .map(|i| train_rows[i].clone())
                .collect();
        }
        cfg
    }

    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), ExplainError> {
        let bad = |m: String| Err(ExplainError::InvalidConfig(m));
        if !(self.sg_sigma > 0.0) {
            return bad("sg_sigma must be positive".into());
        }
        if self.sg_samples == 0 || self.lime_samples == 0 {
            return bad("sample counts must be at least 1".into());
        }
        if self.ig_steps < 2 {
            return bad("ig_steps must be at least 2".into());
        }
        if !(self.lime_ridge >= 0.0) {
            return bad("lime_ridge must be non-negative".into());
        }
        if let Some(w) = self.lime_kernel_width {
            if !(w > 0.0) {
                return bad("lime_kernel_width must be positive".into());
            }
        }
        for (name, v) in [("baseline", &self.baseline), ("sg_noise_scale", &self.sg_noise_scale)] {
            if let Some(v) = v {
                if v.len() != dim {
                    return bad(format!("{name} has length {}, model expects {dim}", v.len()));
                }
            }
        }
        if let Some(b) = self.shap_background.iter().find(|b| b.len() != dim) {
            return bad(format!("background row has length {}, model expects {dim}", b.len()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        hashing::fingerprint(self)
    }

    pub(crate) fn instance_seed(&self, instance_id: &str) -> u64 {
        hashing::derive_seed(self.seed, instance_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub instance_id: String,
    pub method: Method,
    /// One score per encoded column.
    pub scores: Vec<f64>,
    /// One score per codebook feature, summed over its columns.
    pub feature_scores: Vec<f64>,
    pub predicted_label: u8,
    pub predicted_probability: f64,
    /// KernelSHAP and the Shapley oracle report the base value `E_b f(b)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
    pub config_fingerprint: String,
}

impl Attribution {
    pub(crate) fn assemble<M: DifferentiableModel + ?Sized>(
        model: &M,
        x: &EncodedVector,
        config: &ExplainerConfig,
        method: Method,
        scores: Vec<f64>,
        base_value: Option<f64>,
    ) -> Self {
        let prediction = model.predict(&x.values);
        let feature_scores = if x.encoder.dim() == scores.len() {
            x.encoder.aggregate(&scores)
        } else {
            scores.clone()
        };
        Self {
            instance_id: x.instance_id.clone(),
            method,
            scores,
            feature_scores,
            predicted_label: prediction.label,
            predicted_probability: prediction.probability,
            base_value,
            config_fingerprint: config.fingerprint(),
        }
    }
}

pub(crate) fn check_input<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<(), ExplainError> {
    if x.dim() != model.input_dim() {
        return Err(ExplainError::Dimension {
            expected: model.input_dim(),
            actual: x.dim(),
        });
    }
    config.validate(model.input_dim())
}

/// Runs the method named in `config`.
pub fn explain<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    match config.method {
        Method::Grad => vanilla_gradient(model, x, config),
        Method::GradXInput => gradient_x_input(model, x, config),
        Method::Smoothgrad => smoothgrad(model, x, config),
        Method::IntegratedGradients => integrated_gradients(model, x, config),
        Method::Lime => lime(model, x, config),
        Method::KernelShap => kernel_shap(model, x, config),
    }
}
