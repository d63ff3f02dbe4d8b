use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_input, Attribution, DifferentiableModel, ExplainError, ExplainerConfig, Method};
use crate::data::EncodedVector;
use crate::exec;

pub fn vanilla_gradient<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    check_input(model, x, config)?;
    let g = model.gradient(&x.values, config.target);
    Ok(Attribution::assemble(model, x, config, Method::Grad, g, None))
}

pub fn gradient_x_input<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    check_input(model, x, config)?;
    let g = model.gradient(&x.values, config.target);
    let scores = g.iter().zip(&x.values).map(|(g, v)| g * v).collect();
    Ok(Attribution::assemble(model, x, config, Method::GradXInput, scores, None))
}

/// Mean gradient over `sg_samples` Gaussian perturbations of `x`. Column `i`
/// gets noise with standard deviation `sg_sigma * scale[i]`.
pub fn smoothgrad<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    check_input(model, x, config)?;
    let d = x.dim();
    let n = config.sg_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(config.instance_seed(&x.instance_id));
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|i| {
                    let scale = config.sg_noise_scale.as_ref().map_or(1.0, |s| s[i]);
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    x.values[i] + config.sg_sigma * scale * eps
                })
                .collect()
        })
        .collect();
    let grads = exec::map(config.execution, &points, |p| model.gradient(p, config.target));
    let mut mean = vec![0.0; d];
    for (k, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(ExplainError::NonFiniteGradient { sample: k });
        }
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    Ok(Attribution::assemble(model, x, config, Method::Smoothgrad, mean, None))
}

/// Integrated Gradients with an `ig_steps`-point midpoint Riemann sum along
/// the straight path from the baseline to `x`.
///
/// With `ig_split_kinks`, a cell that contains a breakpoint reported by the
/// model is cut there and each piece gets its own midpoint, weighted by its
/// length. Cells without breakpoints are unchanged.
pub fn integrated_gradients<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    check_input(model, x, config)?;
    let d = x.dim();
    let m = config.ig_steps;
    let zero = vec![0.0; d];
    let baseline = config.baseline.as_deref().unwrap_or(&zero);
    let kinks = if config.ig_split_kinks {
        model.path_breakpoints(baseline, &x.values)
    } else {
        Vec::new()
    };
    let nodes = midpoint_nodes(m, &kinks);
    let grads = exec::map(config.execution, &nodes, |&(alpha, _)| {
        let p: Vec<f64> = baseline
            .iter()
            .zip(&x.values)
            .map(|(b, v)| b + alpha * (v - b))
            .collect();
        model.gradient(&p, config.target)
    });
    // Runs of identical gradients (one activation region of a piecewise
    // linear model) are weighted once by their total length, so the result
    // does not pick up rounding from the number of cells.
    let mut avg = vec![Neumaier::default(); d];
    let mut run = 0;
    while run < nodes.len() {
        let mut weight = Neumaier::default();
        let mut end = run;
        while end < nodes.len() && grads[end] == grads[run] {
            weight.add(nodes[end].1);
            end += 1;
        }
        let w = weight.sum();
        for (a, v) in avg.iter_mut().zip(&grads[run]) {
            a.add(w * v);
        }
        run = end;
    }
    let scores = avg
        .iter()
        .zip(x.values.iter().zip(baseline))
        .map(|(a, (v, b))| (v - b) * a.sum())
        .collect();
    Ok(Attribution::assemble(model, x, config, Method::IntegratedGradients, scores, None))
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn sum(&self) -> f64 {
        self.sum + self.carry
    }
}

/// `(point, weight)` pairs of the midpoint rule on `m` equal cells, with
/// cells cut at the sorted `kinks`.
fn midpoint_nodes(m: usize, kinks: &[f64]) -> Vec<(f64, f64)> {
    let h = 1.0 / m as f64;
    let mut nodes = Vec::with_capacity(m + 2 * kinks.len());
    let mut next = 0;
    for k in 0..m {
        let (lo, hi) = (k as f64 * h, (k + 1) as f64 * h);
        let start = next;
        while next < kinks.len() && kinks[next] < hi {
            next += 1;
        }
        let inside: Vec<f64> = kinks[start..next].iter().copied().filter(|t| *t > lo).collect();
        if inside.is_empty() {
            nodes.push(((k as f64 + 0.5) * h, h));
            continue;
        }
        let mut a = lo;
        for b in inside.into_iter().chain(std::iter::once(hi)) {
            if b > a {
                nodes.push((0.5 * (a + b), b - a));
            }
            a = b;
        }
    }
    nodes
}
