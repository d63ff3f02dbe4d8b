use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::{check_alpha, PowerError};
use crate::exec::{self, Execution};

/// Simulations per independently seeded shard.
pub const MC_SHARD: usize = 1_000;
const MIN_SIMULATIONS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub power: f64,
    /// Binomial standard error of `power`.
    pub se: f64,
    pub rejections: usize,
    pub simulations: usize,
}

/// Rejection rate of the one-way ANOVA F test on simulated normal groups.
///
/// Shard `s` draws from a ChaCha8 stream `s` of `seed`, so the estimate does
/// not depend on `exec` or the number of worker threads.
pub fn monte_carlo_power(
    group_means: &[f64],
    common_sd: f64,
    n_per_group: usize,
    alpha: f64,
    simulations: usize,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarloEstimate, PowerError> {
    let k = group_means.len();
    if k < 2 {
        return Err(PowerError::TooFewGroups(k));
    }
    if !(common_sd > 0.0) {
        return Err(PowerError::NonPositiveSd(common_sd));
    }
    if n_per_group < 2 {
        return Err(PowerError::TooFewPerGroup(n_per_group));
    }
    check_alpha(alpha)?;
    if simulations < MIN_SIMULATIONS {
        return Err(PowerError::TooFewSimulations {
            min: MIN_SIMULATIONS,
            got: simulations,
        });
    }
    let d1 = (k - 1) as f64;
    let d2 = (k * (n_per_group - 1)) as f64;
    let critical = FisherSnedecor::new(d1, d2)
        .expect("degrees of freedom are positive")
        .inverse_cdf(1.0 - alpha);

    let shards = simulations.div_ceil(MC_SHARD);
    let counts = exec::map_range(exec, shards, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let draws = MC_SHARD.min(simulations - s * MC_SHARD);
        let mut group_sum = vec![0.0; k];
        let mut rejections = 0;
        for _ in 0..draws {
            let mut ssw = 0.0;
            for (g, &mu) in group_means.iter().enumerate() {
                // Welford within the group.
                let mut mean = 0.0;
                let mut m2 = 0.0;
                for i in 0..n_per_group {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let y = mu + common_sd * z;
                    let delta = y - mean;
                    mean += delta / (i + 1) as f64;
                    m2 += delta * (y - mean);
                }
                group_sum[g] = mean;
                ssw += m2;
            }
            let grand = group_sum.iter().sum::<f64>() / k as f64;
            let ssb = n_per_group as f64 * group_sum.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
            let stat = (ssb / d1) / (ssw / d2);
            if stat > critical {
                rejections += 1;
            }
        }
        rejections
    });
    let rejections: usize = counts.iter().sum();
    let power = rejections as f64 / simulations as f64;
    Ok(MonteCarloEstimate {
        power,
        se: (power * (1.0 - power) / simulations as f64).sqrt(),
        rejections,
        simulations,
    })
}
