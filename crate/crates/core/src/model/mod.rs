//! Binary classifiers with input-gradient access.
//!
//! Both families share one representation: a stack of dense layers with ReLU
//! between them and a single logit output. Logistic regression is the
//! zero-hidden-layer case.

mod checkpoint;
mod metrics;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, EncodedVector};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use metrics::{evaluate_model, ModelMetrics};
pub use train::{train_model, train_model_with};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input has dimension {actual}, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("training diverged at epoch {epoch} (loss {loss}) with spec {spec:?}")]
    Divergence {
        epoch: usize,
        loss: f64,
        spec: Box<ModelSpec>,
    },
    #[error("checkpoint codebook hash {found} does not match {expected}")]
    CodebookMismatch { expected: String, found: String },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Logistic,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Scalar model output that explanations are computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Probability,
    #[default]
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub l2_penalty: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub decision_threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl ModelSpec {
    pub fn logistic() -> Self {
        Self {
            family: ModelFamily::Logistic,
            hidden_sizes: Vec::new(),
            activation: Activation::Relu,
            l2_penalty: 1e-3,
            epochs: 500,
            learning_rate: 0.5,
            seed: 0,
            decision_threshold: 0.5,
        }
    }

    /// One hidden layer of 64 rectified units.
    pub fn neural() -> Self {
        Self {
            family: ModelFamily::Neural,
            hidden_sizes: vec![64],
            l2_penalty: 1e-3,
            epochs: 800,
            learning_rate: 0.1,
            ..Self::logistic()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        match self.family {
            ModelFamily::Logistic if !self.hidden_sizes.is_empty() => {
                return bad("logistic models have no hidden layers")
            }
            ModelFamily::Neural if self.hidden_sizes.is_empty() => {
                return bad("neural models need at least one hidden layer")
            }
            _ => {}
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_penalty >= 0.0) {
            return bad("l2_penalty must be non-negative");
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad("decision_threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Dense layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + dot(row, x));
        }
    }

    /// `W^T g`.
    fn backward(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (o, go) in g.iter().enumerate() {
            if *go == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (acc, w) in out.iter_mut().zip(row) {
                *acc += go * w;
            }
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub train_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
}

/// Pre-activations of every layer, kept for backpropagation.
pub(crate) struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
}

impl TrainedModel {
    /// A logistic model with the given weights, for tests and examples.
    pub fn logistic(weights: Vec<f64>, bias: f64) -> Self {
        let d = weights.len();
        Self {
            spec: ModelSpec::logistic(),
            layers: vec![Layer {
                inputs: d,
                outputs: 1,
                weights,
                bias: vec![bias],
            }],
            input_dim: d,
            train_fingerprint: String::new(),
            training: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.spec.decision_threshold = threshold;
        self
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() == self.input_dim {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            })
        }
    }

    pub(crate) fn trace(&self, x: &[f64]) -> ForwardTrace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut z = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &post[i - 1] };
            layer.forward(input, &mut z);
            let a = if i + 1 < self.layers.len() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z.clone());
            post.push(a);
        }
        ForwardTrace { pre }
    }

    /// Logit without a dimension check; callers guarantee `x.len()`.
    pub fn logit_unchecked(&self, x: &[f64]) -> f64 {
        let mut buf = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&buf, &mut next);
            if i < last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut buf, &mut next);
        }
        buf[0]
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_dim(x)?;
        Ok(self.logit_unchecked(x))
    }

    pub fn output_unchecked(&self, x: &[f64], target: Target) -> f64 {
        let z = self.logit_unchecked(x);
        match target {
            Target::Logit => z,
            Target::Probability => sigmoid(z),
        }
    }

    pub fn predict_values(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        let probability = sigmoid(self.logit(x)?);
        // Ties at the threshold go to the positive class.
        let label = u8::from(probability >= self.spec.decision_threshold);
        Ok(Prediction { probability, label })
    }

    pub fn predict(&self, x: &EncodedVector) -> Result<Prediction, ModelError> {
        self.predict_values(&x.values)
    }

    /// Gradient of the logit with respect to the input, no dimension check.
    pub fn logit_gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let trace = self.trace(x);
        let mut g = vec![1.0];
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(&g);
            if i > 0 {
                for (gj, zj) in g.iter_mut().zip(&trace.pre[i - 1]) {
                    if *zj <= 0.0 {
                        *gj = 0.0;
                    }
                }
            }
        }
        g
    }

    pub fn gradient_unchecked(&self, x: &[f64], target: Target) -> Vec<f64> {
        let mut g = self.logit_gradient_unchecked(x);
        if target == Target::Probability {
            let p = sigmoid(self.logit_unchecked(x));
            let scale = p * (1.0 - p);
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
        g
    }

    pub fn input_gradient(&self, x: &[f64], target: Target) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        Ok(self.gradient_unchecked(x, target))
    }

    /// Values of `t` in `(0, 1)` where a hidden unit changes state along
    /// `from + t (to - from)`. Between consecutive breakpoints the logit is
    /// affine in `t`.
    pub fn path_breakpoints(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        const MAX_REGIONS: usize = 1 << 16;
        let hidden = self.layers.len().saturating_sub(1);
        if hidden == 0 {
            return Vec::new();
        }
        let dir: Vec<f64> = to.iter().zip(from).map(|(b, a)| b - a).collect();
        let mut out = Vec::new();
        let mut t = 0.0;
        while out.len() < MAX_REGIONS {
            let mut value: Vec<f64> = from.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let mut slope = dir.clone();
            let mut step = f64::INFINITY;
            let (mut z, mut dz) = (Vec::new(), Vec::new());
            for layer in &self.layers[..hidden] {
                layer.forward(&value, &mut z);
                layer.forward(&slope, &mut dz);
                for (dzj, b) in dz.iter_mut().zip(&layer.bias) {
                    *dzj -= b;
                }
                for (zj, dzj) in z.iter_mut().zip(dz.iter_mut()) {
                    let at_zero = zj.abs() <= 1e-12 * (1.0 + dzj.abs());
                    let active = if at_zero { *dzj > 0.0 } else { *zj > 0.0 };
                    if !at_zero && (*zj > 0.0) != (*dzj > 0.0) && *dzj != 0.0 {
                        step = step.min(-*zj / *dzj);
                    }
                    if !active {
                        *zj = 0.0;
                        *dzj = 0.0;
                    }
                }
                std::mem::swap(&mut value, &mut z);
                std::mem::swap(&mut slope, &mut dz);
            }
            t += step;
            if !(t < 1.0) {
                break;
            }
            out.push(t);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}
