use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{sigmoid, Layer, ModelError, ModelFamily, ModelSpec, TrainedModel, TrainingSummary};
use crate::data::{Dataset, Encoder, Split};
use crate::exec::{self, Execution};
use crate::hashing;

const CHUNK: usize = 256;

/// Trains on the train split with full-batch gradient descent.
pub fn train_model(dataset: &Dataset, encoder: &Encoder, spec: &ModelSpec) -> Result<TrainedModel, ModelError> {
    train_model_with(dataset, encoder, spec, Execution::default())
}

pub fn train_model_with(
    dataset: &Dataset,
    encoder: &Encoder,
    spec: &ModelSpec,
    exec: Execution,
) -> Result<TrainedModel, ModelError> {
    let train = dataset.part(Split::Train)?;
    let mut rows = Vec::with_capacity(train.len());
    let mut labels = Vec::with_capacity(train.len());
    let mut ids: Vec<&str> = Vec::with_capacity(train.len());
    for inst in &train {
        rows.push(encoder.encode_values(inst)?);
        labels.push(inst.label);
        ids.push(&inst.id);
    }
    ids.sort_unstable();
    let mut model = fit(&rows, &labels, spec, exec)?;
    model.train_fingerprint = hashing::fingerprint(&(ids, spec, encoder.dim(), &encoder.codebook_hash));
    Ok(model)
}

/// Fits a model on an explicit design matrix. The fingerprint covers the
/// rows themselves since there are no instance ids.
pub fn fit(rows: &[Vec<f64>], labels: &[u8], spec: &ModelSpec, exec: Execution) -> Result<TrainedModel, ModelError> {
    spec.validate()?;
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(ModelError::InvalidSpec("training needs matching, non-empty rows and labels".into()));
    }
    let input_dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != input_dim) {
        return Err(ModelError::DimensionMismatch {
            expected: input_dim,
            actual: bad.len(),
        });
    }

    let mut layers = initialise(spec, input_dim, labels);
    let n = rows.len() as f64;
    let mut initial_loss = f64::NAN;
    let mut loss = f64::NAN;
    for epoch in 0..=spec.epochs {
        let (grad, data_loss) = batch_gradient(&layers, rows, labels, exec);
        let penalty: f64 = layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum::<f64>()
            * spec.l2_penalty
            / 2.0;
        loss = data_loss / n + penalty;
        if !loss.is_finite() {
            return Err(ModelError::Divergence {
                epoch,
                loss,
                spec: Box::new(spec.clone()),
            });
        }
        if epoch == 0 {
            initial_loss = loss;
        }
        if epoch == spec.epochs {
            break;
        }
        let mut offset = 0;
        for layer in layers.iter_mut() {
            for w in layer.weights.iter_mut() {
                *w -= spec.learning_rate * (grad[offset] / n + spec.l2_penalty * *w);
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b -= spec.learning_rate * grad[offset] / n;
                offset += 1;
            }
        }
    }

    let fingerprint = hashing::fingerprint(&(rows, labels, spec));
    Ok(TrainedModel {
        spec: spec.clone(),
        layers,
        input_dim,
        train_fingerprint: fingerprint,
        training: Some(TrainingSummary {
            epochs: spec.epochs,
            initial_loss,
            final_loss: loss,
        }),
    })
}

fn initialise(spec: &ModelSpec, input_dim: usize, labels: &[u8]) -> Vec<Layer> {
    let positives = labels.iter().filter(|&&y| y == 1).count() as f64;
    let base_rate = (positives / labels.len() as f64).clamp(1e-3, 1.0 - 1e-3);
    let output_bias = (base_rate / (1.0 - base_rate)).ln();

    let sizes: Vec<usize> = match spec.family {
        ModelFamily::Logistic => vec![input_dim, 1],
        ModelFamily::Neural => std::iter::once(input_dim)
            .chain(spec.hidden_sizes.iter().copied())
            .chain(std::iter::once(1))
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layers = Vec::new();
    for (i, pair) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut layer = Layer::zeros(fan_in, fan_out);
        let is_output = i + 2 == sizes.len();
        if spec.family == ModelFamily::Neural {
            let gain = if is_output { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in.max(1) as f64).sqrt()).expect("finite std");
            for w in layer.weights.iter_mut() {
                *w = normal.sample(&mut rng);
            }
        }
        if is_output {
            layer.bias[0] = output_bias;
        }
        layers.push(layer);
    }
    layers
}

/// Summed (not averaged) parameter gradient and data loss over all rows.
/// Chunks are reduced in order so the result does not depend on threading.
fn batch_gradient(layers: &[Layer], rows: &[Vec<f64>], labels: &[u8], exec: Execution) -> (Vec<f64>, f64) {
    let n_params: usize = layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let chunks = rows.len().div_ceil(CHUNK);
    let partials = exec::map_range(exec, chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(rows.len());
        let mut grad = vec![0.0; n_params];
        let mut loss = 0.0;
        for (x, &y) in rows[lo..hi].iter().zip(&labels[lo..hi]) {
            loss += accumulate(layers, x, f64::from(y), &mut grad);
        }
        (grad, loss)
    });
    let mut grad = vec![0.0; n_params];
    let mut loss = 0.0;
    for (g, l) in partials {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
        loss += l;
    }
    (grad, loss)
}

fn accumulate(layers: &[Layer], x: &[f64], y: f64, grad: &mut [f64]) -> f64 {
    // Forward pass.
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut current = x.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        let mut z = Vec::with_capacity(layer.outputs);
        for o in 0..layer.outputs {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            z.push(layer.bias[o] + super::dot(row, &current));
        }
        inputs.push(current);
        current = if i + 1 < layers.len() {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    let logit = current[0];
    let loss = logit.max(0.0) + (-logit.abs()).exp().ln_1p() - y * logit;

    // Parameter offsets per layer.
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for l in layers {
        offsets.push(off);
        off += l.weights.len() + l.bias.len();
    }

    let mut delta = vec![sigmoid(logit) - y];
    for i in (0..layers.len()).rev() {
        let layer = &layers[i];
        let base = offsets[i];
        let input = &inputs[i];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &mut grad[base + o * layer.inputs..base + (o + 1) * layer.inputs];
            for (g, xi) in row.iter_mut().zip(input) {
                *g += d * xi;
            }
            grad[base + layer.weights.len() + o] += d;
        }
        if i > 0 {
            let mut back = layer.backward(&delta);
            for (b, z) in back.iter_mut().zip(&pre[i - 1]) {
                if *z <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
    }
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Target;

    fn separable(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while rows.len() < n {
            let x = [normal.sample(&mut rng), normal.sample(&mut rng)];
            let margin: f64 = x[0] - 0.5 * x[1];
            if margin.abs() < 0.2 {
                continue;
            }
            labels.push(u8::from(margin > 0.0));
            rows.push(x.to_vec());
        }
        (rows, labels)
    }

    fn accuracy(m: &TrainedModel, rows: &[Vec<f64>], labels: &[u8]) -> f64 {
        rows.iter()
            .zip(labels)
            .filter(|(x, &y)| m.predict_values(x).unwrap().label == y)
            .count() as f64
            / rows.len() as f64
    }

    #[test]
    fn logistic_fits_separable_data() {
        let (rows, labels) = separable(400);
        let m = fit(&rows, &labels, &ModelSpec::logistic(), Execution::Sequential).unwrap();
        assert!(accuracy(&m, &rows, &labels) >= 0.95);
        let t = m.training.as_ref().unwrap();
        assert!(t.final_loss <= t.initial_loss);
    }

    #[test]
    fn neural_training_is_deterministic_across_modes() {
        let (rows, labels) = separable(600);
        let mut spec = ModelSpec::neural();
        spec.hidden_sizes = vec![8];
        spec.epochs = 50;
        spec.seed = 9;
        let a = fit(&rows, &labels, &spec, Execution::Sequential).unwrap();
        let b = fit(&rows, &labels, &spec, Execution::Parallel).unwrap();
        let c = fit(&rows, &labels, &spec, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn zero_epochs_predicts_base_rate() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 50.0 - 1.0]).collect();
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 10 < 3)).collect();
        let mut spec = ModelSpec::logistic();
        spec.epochs = 0;
        let m = fit(&rows, &labels, &spec, Execution::Sequential).unwrap();
        let p = m.output_unchecked(&[0.4], Target::Probability);
        assert!((p - 0.3).abs() < 1e-9);
    }

    #[test]
    fn divergence_is_reported() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![1e200 * i as f64]).collect();
        let labels: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
        let mut spec = ModelSpec::logistic();
        spec.learning_rate = 1e10;
        spec.epochs = 20;
        match fit(&rows, &labels, &spec, Execution::Sequential) {
            Err(ModelError::Divergence { spec: s, .. }) => assert_eq!(s.learning_rate, 1e10),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
