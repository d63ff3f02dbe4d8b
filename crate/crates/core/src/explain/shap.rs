use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_input, Attribution, DifferentiableModel, ExplainError, ExplainerConfig, Method, ShapMode};
use crate::data::EncodedVector;
use crate::exec;
use crate::model::Target;

/// Largest player count [`ShapMode::Exact`] will enumerate.
pub const MAX_EXACT_PLAYERS: usize = 20;
/// Largest player count the brute-force Shapley oracle accepts.
pub const MAX_ORACLE_PLAYERS: usize = 12;

/// Interventional coalition value: the mean model output when the players in
/// `mask` take their values from `x` and the rest from each background row.
fn coalition_value<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &[f64],
    background: &[Vec<f64>],
    mask: &[bool],
    target: Target,
) -> f64 {
    let mut z = vec![0.0; x.len()];
    let mut total = 0.0;
    for b in background {
        for i in 0..x.len() {
            z[i] = if mask[i] { x[i] } else { b[i] };
        }
        total += model.output(&z, target);
    }
    total / background.len() as f64
}

/// Shapley kernel weight of a coalition of size `s` among `d` players.
fn kernel_weight(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// KernelSHAP over encoded columns with an interventional value function.
///
/// All proper coalitions are enumerated when they fit in the sample budget
/// (or when [`ShapMode::Exact`] asks for it); otherwise coalition sizes are
/// drawn in proportion to the kernel and paired with their complements. The
/// efficiency constraint is imposed exactly by eliminating the last player.
pub fn kernel_shap<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    check_input(model, x, config)?;
    let background = &config.shap_background;
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let d = x.dim();
    let target = config.target;
    let base = coalition_value(model, &x.values, background, &vec![false; d], target);
    let full = model.output(&x.values, target);
    let delta = full - base;
    if d <= 1 {
        let scores = vec![delta; d];
        return Ok(Attribution::assemble(model, x, config, Method::KernelShap, scores, Some(base)));
    }

    let budget = config.shap_coalition_samples.unwrap_or(2 * d + 2048);
    let enumerate = match config.shap_mode {
        ShapMode::Exact if d > MAX_EXACT_PLAYERS => {
            return Err(ExplainError::TooManyPlayers {
                players: d,
                max: MAX_EXACT_PLAYERS,
            })
        }
        ShapMode::Exact => true,
        ShapMode::Sampled => false,
        ShapMode::Auto => d < 63 && (1u64 << d) - 2 <= budget as u64,
    };
    let coalitions = if enumerate {
        enumerate_coalitions(d)
    } else {
        sample_coalitions(d, budget, config.instance_seed(&x.instance_id))
    };
    let values = exec::map(config.execution, &coalitions, |(mask, _)| {
        coalition_value(model, &x.values, background, mask, target)
    });

    let mut scores = solve_efficient(d, &coalitions, &values, base, delta);
    let assigned: f64 = scores.iter().sum();
    scores.push(delta - assigned);
    Ok(Attribution::assemble(model, x, config, Method::KernelShap, scores, Some(base)))
}

fn enumerate_coalitions(d: usize) -> Vec<(Vec<bool>, f64)> {
    (1..(1u64 << d) - 1)
        .map(|m| {
            let mask: Vec<bool> = (0..d).map(|i| m >> i & 1 == 1).collect();
            let s = m.count_ones() as usize;
            (mask, kernel_weight(d, s))
        })
        .collect()
}

fn sample_coalitions(d: usize, budget: usize, seed: u64) -> Vec<(Vec<bool>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size_weights: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
    let total: f64 = size_weights.iter().sum();
    let mut counts: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    for _ in 0..budget.div_ceil(2).max(1) {
        let mut u = rng.random::<f64>() * total;
        let mut s = d - 1;
        for (i, w) in size_weights.iter().enumerate() {
            if u < *w {
                s = i + 1;
                break;
            }
            u -= w;
        }
        let mut mask = vec![false; d];
        for i in rand::seq::index::sample(&mut rng, d, s) {
            mask[i] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|m| !m).collect();
        *counts.entry(mask).or_insert(0.0) += 1.0;
        *counts.entry(complement).or_insert(0.0) += 1.0;
    }
    counts.into_iter().collect()
}

/// Weighted least squares for the first `d - 1` attributions after
/// substituting `phi_d = delta - sum(phi_1..phi_{d-1})`.
fn solve_efficient(d: usize, coalitions: &[(Vec<bool>, f64)], values: &[f64], base: f64, delta: f64) -> Vec<f64> {
    let p = d - 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for ((mask, w), v) in coalitions.iter().zip(values) {
        let last = f64::from(u8::from(mask[p]));
        for j in 0..p {
            row[j] = f64::from(u8::from(mask[j])) - last;
        }
        let y = v - base - last * delta;
        for j in 0..p {
            if row[j] == 0.0 {
                continue;
            }
            b[j] += w * row[j] * y;
            for k in 0..p {
                a[(j, k)] += w * row[j] * row[k];
            }
        }
    }
    let solution = match a.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => a
            .svd(true, true)
            .solve(&b, 1e-12)
            .expect("both factors were computed"),
    };
    solution.iter().copied().collect()
}

/// Shapley values by full enumeration of the interventional game. Slow and
/// exact; used to check KernelSHAP.
pub fn exact_shapley_oracle<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    check_input(model, x, config)?;
    let d = x.dim();
    if d > MAX_ORACLE_PLAYERS {
        return Err(ExplainError::TooManyPlayers {
            players: d,
            max: MAX_ORACLE_PLAYERS,
        });
    }
    let background = &config.shap_background;
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }

    let n_masks = 1usize << d;
    let mut v = vec![0.0; n_masks];
    let mut z = vec![0.0; d];
    for (m, slot) in v.iter_mut().enumerate() {
        let mut acc = 0.0;
        for b in background {
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = if m & (1 << i) != 0 { x.values[i] } else { b[i] };
            }
            acc += model.output(&z, config.target);
        }
        *slot = acc / background.len() as f64;
    }

    let factorial: Vec<f64> = (0..=d).scan(1.0, |f, k| {
        if k > 0 {
            *f *= k as f64;
        }
        Some(*f)
    })
    .collect();
    let mut phi = vec![0.0; d];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        for m in 0..n_masks {
            if m & (1 << i) != 0 {
                continue;
            }
            let s = m.count_ones() as usize;
            let weight = factorial[s] * factorial[d - s - 1] / factorial[d];
            *phi_i += weight * (v[m | (1 << i)] - v[m]);
        }
    }
    Ok(Attribution::assemble(model, x, config, Method::KernelShap, phi, Some(v[0])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, ModelSpec, TrainedModel};

    fn small_net(d: usize, seed: u64) -> TrainedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |i, o| Layer {
            inputs: i,
            outputs: o,
            weights: (0..i * o).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..o).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let layers = vec![layer(d, 5), layer(5, 1)];
        TrainedModel {
            spec: ModelSpec::neural(),
            layers,
            input_dim: d,
            train_fingerprint: String::new(),
            training: None,
        }
    }

    fn background(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn kernel_weight_matches_definition() {
        assert!((kernel_weight(4, 1) - 3.0 / (4.0 * 3.0)).abs() < 1e-15);
        assert!((kernel_weight(6, 3) - 5.0 / (20.0 * 9.0)).abs() < 1e-15);
    }

    #[test]
    fn enumerated_kernel_shap_matches_oracle() {
        let d = 6;
        let model = small_net(d, 3);
        let mut cfg = ExplainerConfig::new(Method::KernelShap);
        cfg.shap_background = background(d, 10, 4);
        let x = EncodedVector::raw(vec![0.3, -0.7, 0.9, 0.1, -0.2, 0.5]);
        let k = kernel_shap(&model, &x, &cfg).unwrap();
        let o = exact_shapley_oracle(&model, &x, &cfg).unwrap();
        for (a, b) in k.scores.iter().zip(&o.scores) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((k.base_value.unwrap() - o.base_value.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn linear_model_closed_form() {
        let w = vec![1.0, -2.0, 0.5];
        let model = TrainedModel::logistic(w.clone(), 0.1);
        let bg = background(3, 7, 1);
        let mut cfg = ExplainerConfig::new(Method::KernelShap);
        cfg.shap_background = bg.clone();
        let x = EncodedVector::raw(vec![0.4, 0.2, -0.6]);
        let a = kernel_shap(&model, &x, &cfg).unwrap();
        for i in 0..3 {
            let mean: f64 = bg.iter().map(|b| b[i]).sum::<f64>() / bg.len() as f64;
            assert!((a.scores[i] - w[i] * (x.values[i] - mean)).abs() < 1e-10);
        }
    }

    #[test]
    fn sampled_mode_is_efficient_and_close() {
        let d = 10;
        let model = small_net(d, 8);
        let mut cfg = ExplainerConfig::new(Method::KernelShap);
        cfg.shap_background = background(d, 5, 2);
        cfg.shap_mode = ShapMode::Sampled;
        cfg.shap_coalition_samples = Some(600);
        let x = EncodedVector::raw((0..d).map(|i| (i as f64 * 0.7).sin()).collect()).with_id("z");
        let k = kernel_shap(&model, &x, &cfg).unwrap();
        let o = exact_shapley_oracle(&model, &x, &cfg).unwrap();
        let full = model.output(&x.values, Target::Logit);
        let sum: f64 = k.scores.iter().sum();
        assert!((sum + k.base_value.unwrap() - full).abs() < 1e-9);
        let scale = o.scores.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in k.scores.iter().zip(&o.scores) {
            assert!((a - b).abs() < 0.1 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn exact_mode_and_oracle_limits() {
        let model = TrainedModel::logistic(vec![0.0; 13], 0.0);
        let mut cfg = ExplainerConfig::new(Method::KernelShap);
        cfg.shap_background = vec![vec![0.0; 13]];
        let x = EncodedVector::raw(vec![0.0; 13]);
        assert!(matches!(
            exact_shapley_oracle(&model, &x, &cfg),
            Err(ExplainError::TooManyPlayers { max: 12, .. })
        ));
        cfg.shap_background.clear();
        assert!(matches!(kernel_shap(&model, &x, &cfg), Err(ExplainError::EmptyBackground)));
    }
}
