use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_input, Attribution, DifferentiableModel, ExplainError, ExplainerConfig, Method};
use crate::data::EncodedVector;
use crate::exec;

/// Condition number above which an unpenalised system counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Local linear surrogate fitted to `lime_samples` Gaussian perturbations of
/// `x`, weighted by `exp(-|z - x|^2 / width^2)`.
pub fn lime<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &EncodedVector,
    config: &ExplainerConfig,
) -> Result<Attribution, ExplainError> {
    check_input(model, x, config)?;
    let d = x.dim();
    let n = config.lime_samples;
    if n < d + 2 {
        return Err(ExplainError::TooFewSamples {
            needed: d + 2,
            actual: n,
        });
    }
    let width = config.lime_kernel_width.unwrap_or(0.75 * (d as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(config.instance_seed(&x.instance_id));
    let mut design = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let mut dist2 = 0.0;
        let z: Vec<f64> = x
            .values
            .iter()
            .map(|v| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                dist2 += eps * eps;
                v + eps
            })
            .collect();
        weights.push((-dist2 / (width * width)).exp());
        design.push(z);
    }
    let targets = exec::map(config.execution, &design, |z| model.output(z, config.target));
    let (coef, _) = fit_weighted_ridge(&design, &targets, &weights, config.lime_ridge)?;
    Ok(Attribution::assemble(model, x, config, Method::Lime, coef, None))
}

/// Weighted ridge regression with an unpenalised intercept. Returns the
/// slope coefficients and the intercept.
///
/// A zero penalty on a rank-deficient design is reported as
/// [`ExplainError::Singular`] rather than solved approximately.
pub fn fit_weighted_ridge(
    rows: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    ridge: f64,
) -> Result<(Vec<f64>, f64), ExplainError> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let total: f64 = weights.iter().sum();
    if n == 0 || !(total > 0.0) {
        return Err(ExplainError::Singular);
    }
    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for ((row, &yi), &w) in rows.iter().zip(y).zip(weights) {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += w * v / total;
        }
        y_mean += w * yi / total;
    }

    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut centred = vec![0.0; d];
    for ((row, &yi), &w) in rows.iter().zip(y).zip(weights) {
        for j in 0..d {
            centred[j] = row[j] - x_mean[j];
        }
        let yc = yi - y_mean;
        for j in 0..d {
            let wj = w * centred[j];
            b[j] += wj * yc;
            for k in j..d {
                a[(j, k)] += wj * centred[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
        a[(j, j)] += ridge;
    }

    if ridge == 0.0 {
        let eig = a.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if !(max > 0.0) || min <= SINGULAR_RATIO * max {
            return Err(ExplainError::Singular);
        }
    }
    let coef = a.cholesky().ok_or(ExplainError::Singular)?.solve(&b);
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
    Ok((coef.iter().copied().collect(), intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainedModel;

    #[test]
    fn recovers_a_linear_logit() {
        let w = vec![1.5, -0.5, 0.25];
        let model = TrainedModel::logistic(w.clone(), -0.3);
        let x = EncodedVector::raw(vec![0.1, 0.2, 0.3]).with_id("i");
        let mut cfg = ExplainerConfig::new(Method::Lime);
        cfg.lime_ridge = 1e-9;
        let a = lime(&model, &x, &cfg).unwrap();
        for (s, e) in a.scores.iter().zip(&w) {
            assert!((s - e).abs() < 1e-6, "{s} vs {e}");
        }
    }

    #[test]
    fn exact_weighted_fit() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 + 3.0 * r[0] - r[1]).collect();
        let w = vec![1.0, 2.0, 0.5, 1.0, 3.0, 1.0];
        let (coef, intercept) = fit_weighted_ridge(&rows, &y, &w, 0.0).unwrap();
        assert!((coef[0] - 3.0).abs() < 1e-9);
        assert!((coef[1] + 1.0).abs() < 1e-9);
        assert!((intercept - 2.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_columns_need_a_ridge() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let v = (i as f64 * 0.37).sin();
                vec![v, v, (i as f64).cos()]
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + r[2]).collect();
        let w = vec![1.0; rows.len()];
        assert!(matches!(
            fit_weighted_ridge(&rows, &y, &w, 0.0),
            Err(ExplainError::Singular)
        ));
        let (coef, _) = fit_weighted_ridge(&rows, &y, &w, 1e-3).unwrap();
        assert!(coef.iter().all(|c| c.is_finite()));
        assert!((coef[0] - coef[1]).abs() < 1e-9);
        assert!((coef[0] + coef[1] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn too_few_samples() {
        let model = TrainedModel::logistic(vec![1.0; 5], 0.0);
        let mut cfg = ExplainerConfig::new(Method::Lime);
        cfg.lime_samples = 6;
        assert!(matches!(
            lime(&model, &EncodedVector::raw(vec![0.0; 5]), &cfg),
            Err(ExplainError::TooFewSamples { needed: 7, .. })
        ));
    }
}
