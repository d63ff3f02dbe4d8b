use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xaistudy::data::{generate_synthetic, sample_study_pool, split_dataset, EncodedVector, Encoder, SyntheticSpec};
use xaistudy::explain::{
    exact_shapley_oracle, explain, fit_weighted_ridge, gradient_x_input, integrated_gradients, kernel_shap, lime,
    precompute_pool, smoothgrad, vanilla_gradient, DifferentiableModel, ExplainerConfig, Method, ShapMode,
};
use xaistudy::model::{Layer, ModelSpec, Target, TrainedModel};
use xaistudy::{Execution, ManualClock};

fn random_net(d: usize, hidden: usize, seed: u64) -> TrainedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |i: usize, o: usize| Layer {
        inputs: i,
        outputs: o,
        weights: (0..i * o).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: (0..o).map(|_| rng.random_range(-0.5..0.5)).collect(),
    };
    let layers = vec![layer(d, hidden), layer(hidden, 1)];
    TrainedModel {
        spec: ModelSpec::neural(),
        layers,
        input_dim: d,
        train_fingerprint: String::new(),
        training: None,
    }
}

fn point(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn probability_target_scales_by_sigmoid_slope() {
    let model = TrainedModel::logistic(vec![1.0, -2.0], 0.0);
    let x = EncodedVector::raw(vec![0.0, 0.0]);
    let mut cfg = ExplainerConfig::new(Method::Grad);
    cfg.target = Target::Probability;
    let g = vanilla_gradient(&model, &x, &cfg).unwrap();
    assert!(max_abs_diff(&g.scores, &[0.25, -0.5]) < 1e-15);
    assert_eq!(g.predicted_label, 1);
}

#[test]
fn gradient_times_input_examples() {
    let model = TrainedModel::logistic(vec![1.0, -2.0], 0.3);
    let cfg = ExplainerConfig::new(Method::GradXInput);
    let a = gradient_x_input(&model, &EncodedVector::raw(vec![2.0, 1.0]), &cfg).unwrap();
    assert_eq!(a.scores, vec![2.0, -2.0]);
    let zero = gradient_x_input(&model, &EncodedVector::raw(vec![0.0, 0.0]), &cfg).unwrap();
    assert!(zero.scores.iter().all(|s| *s == 0.0));

    let net = random_net(5, 7, 1);
    let x = EncodedVector::raw(vec![0.3, -0.2, 1.1, 0.0, -0.9]);
    let g = vanilla_gradient(&net, &x, &cfg).unwrap();
    let gi = gradient_x_input(&net, &x, &cfg).unwrap();
    for i in 0..5 {
        assert_eq!(gi.scores[i], g.scores[i] * x.values[i]);
    }
    assert_eq!(g.scores, net.input_gradient(&x.values, Target::Logit).unwrap());
}

#[test]
fn smoothgrad_of_a_linear_logit_is_the_weight_vector() {
    let w = vec![0.7, -1.3, 2.1];
    let model = TrainedModel::logistic(w.clone(), -0.4);
    let x = EncodedVector::raw(vec![0.5, 0.5, -1.0]).with_id("r");
    for (sigma, n) in [(0.01, 1), (1.0, 7), (5.0, 200)] {
        let mut cfg = ExplainerConfig::new(Method::Smoothgrad);
        cfg.sg_sigma = sigma;
        cfg.sg_samples = n;
        let a = smoothgrad(&model, &x, &cfg).unwrap();
        assert!(max_abs_diff(&a.scores, &w) < 1e-12);
    }
}

#[test]
fn smoothgrad_collapses_to_the_gradient_as_noise_vanishes() {
    let net = random_net(4, 9, 2);
    let x = EncodedVector::raw(vec![0.2, -0.4, 0.9, 0.1]).with_id("s");
    let mut cfg = ExplainerConfig::new(Method::Smoothgrad);
    cfg.sg_sigma = 1e-12;
    cfg.sg_samples = 1;
    let a = smoothgrad(&net, &x, &cfg).unwrap();
    let g = net.input_gradient(&x.values, Target::Logit).unwrap();
    assert!(max_abs_diff(&a.scores, &g) < 1e-6);
}

#[test]
fn smoothgrad_agrees_with_an_independent_monte_carlo_mean() {
    let d = 4;
    let net = random_net(d, 12, 3);
    let x = EncodedVector::raw(vec![0.3, -0.6, 0.2, 0.8]).with_id("mc");
    let sigma = 0.4;
    let mut cfg = ExplainerConfig::new(Method::Smoothgrad);
    cfg.sg_sigma = sigma;
    cfg.sg_samples = 2_000;
    let a = smoothgrad(&net, &x, &cfg).unwrap();

    let big = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut noisy = vec![0.0; d];
    for _ in 0..big {
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            noisy[j] = x.values[j] + sigma * e;
        }
        let g = net.gradient(&noisy, Target::Logit);
        for j in 0..d {
            sum[j] += g[j];
            sum_sq[j] += g[j] * g[j];
        }
    }
    for j in 0..d {
        let mean = sum[j] / big as f64;
        let var = sum_sq[j] / big as f64 - mean * mean;
        let se = (var / 2_000.0 + var / big as f64).sqrt();
        assert!(
            (a.scores[j] - mean).abs() <= 3.0 * se + 1e-12,
            "column {j}: {} vs {mean} (se {se})",
            a.scores[j]
        );
    }
}

#[test]
fn integrated_gradients_examples() {
    let model = TrainedModel::logistic(vec![1.0, -2.0], 0.0);
    let x = EncodedVector::raw(vec![2.0, 1.0]);
    let mut cfg = ExplainerConfig::new(Method::IntegratedGradients);
    cfg.baseline = Some(vec![0.0, 0.0]);
    let a = integrated_gradients(&model, &x, &cfg).unwrap();
    assert!(max_abs_diff(&a.scores, &[2.0, -2.0]) < 1e-12);
    assert!(a.scores.iter().sum::<f64>().abs() < 1e-12);

    let net = random_net(3, 6, 4);
    let y = EncodedVector::raw(vec![0.4, 0.1, -0.3]);
    cfg.baseline = Some(y.values.clone());
    let zero = integrated_gradients(&net, &y, &cfg).unwrap();
    assert!(zero.scores.iter().all(|s| *s == 0.0));
}

#[test]
fn integrated_gradients_completeness_on_a_relu_net() {
    let d = 6;
    let net = random_net(d, 16, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let baseline = vec![0.0; d];
    for _ in 0..20 {
        let x = EncodedVector::raw(point(d, &mut rng));
        let delta = net.output(&x.values, Target::Logit) - net.output(&baseline, Target::Logit);
        let gap = |m: usize, split: bool| {
            let mut cfg = ExplainerConfig::new(Method::IntegratedGradients);
            cfg.ig_steps = m;
            cfg.ig_split_kinks = split;
            let a = integrated_gradients(&net, &x, &cfg).unwrap();
            (a.scores.iter().sum::<f64>() - delta).abs()
        };
        assert!(gap(256, true) <= 1e-4 * delta.abs().max(1.0));
        assert!(gap(4096, true) <= gap(16, true));
        // The plain grid still converges, only at first order.
        assert!(gap(4096, false) <= gap(16, false));
        assert!(gap(16_384, false) <= 1e-3 * delta.abs().max(1.0));
    }
}

#[test]
fn lime_recovers_a_linear_logit() {
    let w = vec![1.5, -0.7, 0.3, 2.0];
    let model = TrainedModel::logistic(w.clone(), 0.2);
    let x = EncodedVector::raw(vec![0.1, -0.3, 0.5, 0.2]).with_id("l");
    let mut cfg = ExplainerConfig::new(Method::Lime);
    cfg.lime_samples = 5_000;
    let a = lime(&model, &x, &cfg).unwrap();
    let dot: f64 = a.scores.iter().zip(&w).map(|(p, q)| p * q).sum();
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    assert!(dot / (norm(&a.scores) * norm(&w)) >= 0.99);
}

#[test]
fn lime_on_a_constant_model_is_zero() {
    let model = TrainedModel::logistic(vec![0.0; 3], 1.7);
    let x = EncodedVector::raw(vec![0.4, -1.0, 2.0]).with_id("c");
    let a = lime(&model, &x, &ExplainerConfig::new(Method::Lime)).unwrap();
    assert!(a.scores.iter().all(|s| s.abs() < 1e-10), "{:?}", a.scores);
}

#[test]
fn ridge_splits_duplicated_columns_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            vec![v, v, rng.random_range(-1.0..1.0)]
        })
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[2] + 0.5).collect();
    let weights: Vec<f64> = (0..200).map(|i| 1.0 + (i % 3) as f64).collect();
    let (coef, _) = fit_weighted_ridge(&rows, &y, &weights, 1e-3).unwrap();
    assert!(coef.iter().all(|c| c.is_finite()));
    assert!((coef[0] - coef[1]).abs() < 1e-9);
    assert!((coef[0] + coef[1] - 2.0).abs() < 1e-2);
}

#[test]
fn kernel_shap_single_player() {
    let net = random_net(1, 5, 8);
    let background = vec![vec![-0.5], vec![0.2], vec![0.9]];
    let mut cfg = ExplainerConfig::new(Method::KernelShap);
    cfg.shap_background = background.clone();
    let x = EncodedVector::raw(vec![0.7]);
    let a = kernel_shap(&net, &x, &cfg).unwrap();
    let mean: f64 = background.iter().map(|b| net.output(b, Target::Logit)).sum::<f64>() / 3.0;
    assert!((a.scores[0] - (net.output(&x.values, Target::Logit) - mean)).abs() < 1e-12);
}

#[test]
fn kernel_shap_linear_example_matches_oracle() {
    let model = TrainedModel::logistic(vec![1.0, 1.0], 0.0);
    let mut cfg = ExplainerConfig::new(Method::KernelShap);
    cfg.shap_background = vec![vec![0.0, 0.0]];
    let x = EncodedVector::raw(vec![1.0, 2.0]);
    let k = kernel_shap(&model, &x, &cfg).unwrap();
    let o = exact_shapley_oracle(&model, &x, &cfg).unwrap();
    assert!(max_abs_diff(&k.scores, &[1.0, 2.0]) < 1e-12);
    assert!(max_abs_diff(&o.scores, &[1.0, 2.0]) < 1e-12);
}

/// `f(x) = g(x0 + x1) + h(x2)`, with `x3` ignored.
struct SymmetricWithDummy;

impl DifferentiableModel for SymmetricWithDummy {
    fn input_dim(&self) -> usize {
        4
    }
    fn output(&self, x: &[f64], _: Target) -> f64 {
        (x[0] + x[1]).tanh() * 2.0 + x[2] * x[2]
    }
    fn gradient(&self, x: &[f64], _: Target) -> Vec<f64> {
        let s = 1.0 - (x[0] + x[1]).tanh().powi(2);
        vec![2.0 * s, 2.0 * s, 2.0 * x[2], 0.0]
    }
    fn predict(&self, x: &[f64]) -> xaistudy::model::Prediction {
        let z = self.output(x, Target::Logit);
        xaistudy::model::Prediction {
            probability: xaistudy::model::sigmoid(z),
            label: u8::from(z >= 0.0),
        }
    }
}

#[test]
fn kernel_shap_symmetry_and_dummy_axioms() {
    let mut cfg = ExplainerConfig::new(Method::KernelShap);
    cfg.shap_background = vec![vec![0.1, 0.1, -0.3, 0.5], vec![-0.4, -0.4, 0.2, 1.0]];
    let x = EncodedVector::raw(vec![0.8, 0.8, 1.0, -2.0]);
    let a = kernel_shap(&SymmetricWithDummy, &x, &cfg).unwrap();
    assert!((a.scores[0] - a.scores[1]).abs() < 1e-12);
    assert!(a.scores[3].abs() < 1e-12);
}

#[test]
fn kernel_shap_matches_the_oracle_at_eight_players() {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..5 {
        let net = random_net(d, 10, 100 + seed);
        let mut cfg = ExplainerConfig::new(Method::KernelShap);
        cfg.shap_mode = ShapMode::Exact;
        cfg.shap_background = (0..6).map(|_| point(d, &mut rng)).collect();
        let x = EncodedVector::raw(point(d, &mut rng));
        let k = kernel_shap(&net, &x, &cfg).unwrap();
        let o = exact_shapley_oracle(&net, &x, &cfg).unwrap();
        assert!(max_abs_diff(&k.scores, &o.scores) <= 1e-6);
        let residual = k.scores.iter().sum::<f64>() + k.base_value.unwrap() - net.output(&x.values, Target::Logit);
        assert!(residual.abs() <= 1e-8);
    }
}

fn pool_fixture() -> (TrainedModel, Arc<Encoder>, Vec<xaistudy::data::Instance>) {
    let data = generate_synthetic(&SyntheticSpec::new(600, 3, 1, vec![1.0, -1.0, 0.5, 0.8], 11)).unwrap();
    let data = split_dataset(&data, 0.4, 11).unwrap();
    let encoder = Arc::new(Encoder::fit(&data).unwrap());
    let model = TrainedModel::logistic(vec![0.6; encoder.dim()], -0.1);
    let pool = sample_study_pool(&data, 200, 3).unwrap();
    (model, encoder, pool)
}

#[test]
fn precompute_pool_sizes_and_idempotence() {
    let (model, encoder, pool) = pool_fixture();
    let clock = ManualClock::epoch();
    let mut cfg = ExplainerConfig::new(Method::Lime);
    cfg.lime_samples = 300;
    let set = precompute_pool(&model, &encoder, &pool, &cfg, &clock);
    assert_eq!(set.records.len(), 200);
    assert!(set.failures.is_empty());
    let again = precompute_pool(&model, &encoder, &pool, &cfg, &clock);
    let bytes = |s: &xaistudy::explain::ExplanationSet| {
        let mut out = Vec::new();
        s.write_jsonl(&mut out).unwrap();
        out
    };
    assert_eq!(bytes(&set), bytes(&again));
    cfg.execution = Execution::Sequential;
    assert_eq!(bytes(&set), bytes(&precompute_pool(&model, &encoder, &pool, &cfg, &clock)));

    let empty = precompute_pool(&model, &encoder, &[], &cfg, &clock);
    assert!(empty.records.is_empty() && empty.failures.is_empty());
}

#[test]
fn jsonl_records_round_trip() {
    let (model, encoder, pool) = pool_fixture();
    let cfg = ExplainerConfig::new(Method::IntegratedGradients);
    let set = precompute_pool(&model, &encoder, &pool[..10], &cfg, &ManualClock::epoch());
    let mut out = Vec::new();
    set.write_jsonl(&mut out).unwrap();
    assert_eq!(String::from_utf8_lossy(&out).lines().count(), 10);
    let back = xaistudy::explain::ExplanationSet::read_jsonl(out.as_slice()).unwrap();
    assert_eq!(back.records, set.records);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn relu_gradient_matches_central_differences(seed in 0u64..1_000, coords in prop::collection::vec(-2.0f64..2.0, 6)) {
        let net = random_net(6, 8, seed);
        let g = net.input_gradient(&coords, Target::Logit).unwrap();
        let h = 1e-5;
        for j in 0..6 {
            let mut up = coords.clone();
            let mut down = coords.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (net.output(&up, Target::Logit) - net.output(&down, Target::Logit)) / (2.0 * h);
            // A kink inside the stencil breaks the finite difference, not the gradient.
            let kink = net.layers[0].bias.iter().enumerate().any(|(u, b)| {
                let row = &net.layers[0].weights[u * 6..(u + 1) * 6];
                let z: f64 = b + row.iter().zip(&coords).map(|(w, x)| w * x).sum::<f64>();
                z.abs() < 2.0 * h * row[j].abs()
            });
            if !kink {
                prop_assert!((g[j] - fd).abs() <= 1e-5 * g[j].abs().max(1.0), "{} vs {}", g[j], fd);
            }
        }
    }

    #[test]
    fn linear_logit_attributions_are_closed_form(
        w in prop::collection::vec(-3.0f64..3.0, 1..6),
        seed in any::<u64>(),
    ) {
        let d = w.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = EncodedVector::raw(point(d, &mut rng)).with_id("p");
        let b = point(d, &mut rng);
        let model = TrainedModel::logistic(w.clone(), 0.3);
        let mut cfg = ExplainerConfig::new(Method::Grad);
        cfg.baseline = Some(b.clone());
        cfg.shap_background = vec![b.clone()];
        cfg.lime_samples = 50;
        cfg.sg_samples = 5;
        let gi: Vec<f64> = w.iter().zip(&x.values).map(|(a, v)| a * v).collect();
        let diff: Vec<f64> = (0..d).map(|i| w[i] * (x.values[i] - b[i])).collect();
        let cases = [
            (Method::Grad, w.clone()),
            (Method::GradXInput, gi),
            (Method::Smoothgrad, w.clone()),
            (Method::IntegratedGradients, diff.clone()),
            (Method::KernelShap, diff),
        ];
        for (method, expected) in cases {
            let a = explain(&model, &x, &cfg.with_method(method)).unwrap();
            prop_assert!(max_abs_diff(&a.scores, &expected) <= 1e-8, "{method}");
        }
    }

    #[test]
    fn logit_is_affine_between_path_breakpoints(seed in 0u64..1_000, ends in prop::collection::vec(-2.0f64..2.0, 8)) {
        let net = random_net(4, 6, seed);
        let (from, to) = ends.split_at(4);
        let kinks = net.path_breakpoints(from, to);
        prop_assert!(kinks.windows(2).all(|w| w[0] < w[1]));
        let at = |t: f64| {
            let p: Vec<f64> = from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect();
            net.output(&p, Target::Logit)
        };
        let mut edges = vec![0.0];
        edges.extend(&kinks);
        edges.push(1.0);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (q1, q2, q3) = (a + 0.25 * (b - a), a + 0.5 * (b - a), a + 0.75 * (b - a));
            let curvature = at(q1) - 2.0 * at(q2) + at(q3);
            prop_assert!(curvature.abs() <= 1e-9, "segment [{a}, {b}] bends by {curvature}");
        }
    }
}
