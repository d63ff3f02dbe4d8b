//! Study planning: one-way ANOVA power, sample sizes and cost.

mod cost;
mod monte_carlo;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

pub use cost::{estimate_cost, CostBreakdown, CostQuery, REFERENCE_HOURLY_RATE};
pub use monte_carlo::{monte_carlo_power, MonteCarloEstimate, MC_SHARD};

/// Total sample size the original benchmark reported for German Credit at
/// alpha 0.05 and power 0.8. The variance behind it was not published, so it
/// is printed for comparison only.
pub const REFERENCE_N_GERMAN_CREDIT: usize = 154;
/// Counterpart of [`REFERENCE_N_GERMAN_CREDIT`] for RCDV.
pub const REFERENCE_N_RCDV: usize = 22_395;
/// Published per-condition accuracies on German Credit
/// (F, FP, FPE-LIME, FPE-SHAP, FPE-SG, FPE-IG).
pub const GERMAN_CREDIT_ACCURACIES: [f64; 6] = [0.497, 0.624, 0.602, 0.758, 0.552, 0.737];
/// Published per-condition accuracies on RCDV, same order.
pub const RCDV_ACCURACIES: [f64; 6] = [0.533, 0.545, 0.58, 0.57, 0.528, 0.568];

/// Upper bound on the Poisson mass dropped from the noncentral-F series.
pub const SERIES_TOLERANCE: f64 = 1e-14;
const MAX_PER_GROUP: usize = 100_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveSd(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("target power must lie in (alpha, 1), got {0}")]
    TargetPower(f64),
    #[error("need at least two observations per group, got {0}")]
    TooFewPerGroup(usize),
    #[error("effect size must be finite and non-negative, got {0}")]
    EffectSize(f64),
    #[error("a zero effect size never reaches power above alpha")]
    NoEffect,
    #[error("target power needs more than {MAX_PER_GROUP} per group")]
    Unreachable,
    #[error("need at least {min} simulations, got {got}")]
    TooFewSimulations { min: usize, got: usize },
}

/// How the within-group sd is chosen when effect sizes come from accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SdSource {
    Supplied(f64),
    /// `sqrt(p(1 - p))` at the grand mean of the proportions.
    PooledBinomial,
}

impl SdSource {
    pub fn resolve(self, means: &[f64]) -> f64 {
        match self {
            SdSource::Supplied(sd) => sd,
            SdSource::PooledBinomial => {
                let p = means.iter().sum::<f64>() / means.len() as f64;
                (p * (1.0 - p)).sqrt()
            }
        }
    }
}

/// Cohen's f: population sd of the group means over the common sd.
pub fn cohens_f(group_means: &[f64], common_sd: f64) -> Result<f64, PowerError> {
    if group_means.len() < 2 {
        return Err(PowerError::TooFewGroups(group_means.len()));
    }
    if !(common_sd > 0.0) || !common_sd.is_finite() {
        return Err(PowerError::NonPositiveSd(common_sd));
    }
    let k = group_means.len() as f64;
    let grand = group_means.iter().sum::<f64>() / k;
    let between = (group_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / k).sqrt();
    Ok(between / common_sd)
}

fn check_alpha(alpha: f64) -> Result<(), PowerError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(PowerError::Alpha(alpha))
    }
}

/// `t = d2 / (d2 + d1 c)` at the upper-alpha critical value `c` of F(d1, d2).
///
/// The upper tail of F equals `I_t(d2/2, d1/2)`, which increases with `t`,
/// so `t` is found by bisection on the regularized incomplete beta.
fn critical_t(d1: f64, d2: f64, alpha: f64) -> f64 {
    let (a, b) = (d2 / 2.0, d1 / 2.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Upper-alpha quantile of the central F distribution.
pub fn f_critical(d1: f64, d2: f64, alpha: f64) -> f64 {
    let t = critical_t(d1, d2, alpha);
    d2 * (1.0 - t) / (d1 * t)
}

/// `P(F' > c)` for noncentral F(d1, d2, lambda), with `t` as in [`critical_t`].
///
/// Poisson mixture of central beta tails, summed outward from the Poisson
/// mode until the unvisited mass is below [`SERIES_TOLERANCE`].
fn noncentral_upper_tail(d1: f64, d2: f64, lambda: f64, t: f64) -> f64 {
    let (a, b) = (d2 / 2.0, d1 / 2.0);
    if lambda == 0.0 {
        return beta_reg(a, b, t);
    }
    let mu = lambda / 2.0;
    let log_w = |j: usize| -mu + j as f64 * mu.ln() - ln_gamma(j as f64 + 1.0);
    let mode = mu.floor() as usize;
    let mut mass = 0.0;
    let mut tail = 0.0;
    for j in (0..=mode).rev() {
        let w = log_w(j).exp();
        mass += w;
        tail += w * beta_reg(a, b + j as f64, t);
        if w < 1e-18 * mass.max(1e-300) && j + 1 < mode {
            break;
        }
    }
    let mut j = mode + 1;
    while 1.0 - mass > SERIES_TOLERANCE {
        let w = log_w(j).exp();
        mass += w;
        tail += w * beta_reg(a, b + j as f64, t);
        j += 1;
        if w == 0.0 && j > mode + 10 {
            break;
        }
    }
    tail.clamp(0.0, 1.0)
}

/// Power of the one-way ANOVA F test with `k` groups of `n` observations.
pub fn anova_power(f: f64, k_groups: usize, n_per_group: usize, alpha: f64) -> Result<f64, PowerError> {
    if k_groups < 2 {
        return Err(PowerError::TooFewGroups(k_groups));
    }
    if n_per_group < 2 {
        return Err(PowerError::TooFewPerGroup(n_per_group));
    }
    if !(f >= 0.0) || !f.is_finite() {
        return Err(PowerError::EffectSize(f));
    }
    check_alpha(alpha)?;
    let k = k_groups as f64;
    let n = n_per_group as f64;
    let (d1, d2) = (k - 1.0, k * (n - 1.0));
    let t = critical_t(d1, d2, alpha);
    Ok(noncentral_upper_tail(d1, d2, f * f * k * n, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSize {
    pub per_group: usize,
    pub total: usize,
    pub achieved_power: f64,
}

/// Smallest balanced design reaching `target_power`.
pub fn required_sample_size(
    f: f64,
    k_groups: usize,
    alpha: f64,
    target_power: f64,
) -> Result<SampleSize, PowerError> {
    check_alpha(alpha)?;
    if !(target_power > alpha && target_power < 1.0) {
        return Err(PowerError::TargetPower(target_power));
    }
    if f == 0.0 {
        return Err(PowerError::NoEffect);
    }
    let power = |n: usize| anova_power(f, k_groups, n, alpha);
    if power(2)? >= target_power {
        return Ok(SampleSize {
            per_group: 2,
            total: 2 * k_groups,
            achieved_power: power(2)?,
        });
    }
    let mut lo = 2;
    let mut hi = 4;
    while power(hi)? < target_power {
        lo = hi;
        hi *= 2;
        if hi > MAX_PER_GROUP {
            return Err(PowerError::Unreachable);
        }
    }
    // power(lo) < target <= power(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if power(mid)? >= target_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SampleSize {
        per_group: hi,
        total: hi * k_groups,
        achieved_power: power(hi)?,
    })
}

/// A power question phrased as group means and a common sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerQuery {
    pub group_means: Vec<f64>,
    pub sd: SdSource,
    pub alpha: f64,
    pub target_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub k_groups: usize,
    pub common_sd: f64,
    pub effect_size_f: f64,
    pub alpha: f64,
    pub target_power: f64,
    pub sample_size: SampleSize,
}

impl PowerQuery {
    pub fn solve(&self) -> Result<PowerReport, PowerError> {
        let common_sd = self.sd.resolve(&self.group_means);
        let f = cohens_f(&self.group_means, common_sd)?;
        let k = self.group_means.len();
        Ok(PowerReport {
            k_groups: k,
            common_sd,
            effect_size_f: f,
            alpha: self.alpha,
            target_power: self.target_power,
            sample_size: required_sample_size(f, k, self.alpha, self.target_power)?,
        })
    }
}

impl PowerReport {
    pub fn to_text(&self) -> String {
        format!(
            "groups: {}\ncommon sd: {:.6}\neffect size f: {:.6}\nalpha: {}\ntarget power: {}\n\
             per-group n: {}\ntotal N: {}\nachieved power: {:.4}\n",
            self.k_groups,
            self.common_sd,
            self.effect_size_f,
            self.alpha,
            self.target_power,
            self.sample_size.per_group,
            self.sample_size.total,
            self.sample_size.achieved_power
        )
    }
}
