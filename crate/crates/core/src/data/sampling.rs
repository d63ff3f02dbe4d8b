use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, Instance, Split};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
const MIN_SPLIT_SIZE: usize = 10;

/// Label-stratified train/test split. The test side has `round(f * N)`
/// instances; per-label quotas use largest remainders so the label mix of the
/// test side tracks the whole dataset.
pub fn split_dataset(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::TestFraction(test_fraction));
    }
    let n = dataset.len();
    if n < MIN_SPLIT_SIZE {
        return Err(DataError::TooFewInstances {
            needed: MIN_SPLIT_SIZE,
            actual: n,
        });
    }
    let n_test = (test_fraction * n as f64).round() as usize;

    let mut by_label: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for inst in &dataset.instances {
        by_label[usize::from(inst.label)].push(&inst.id);
    }
    let exact: Vec<f64> = by_label
        .iter()
        .map(|ids| test_fraction * ids.len() as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut short = n_test.saturating_sub(quota.iter().sum());
    for &label in order.iter().cycle().take(4) {
        if short == 0 {
            break;
        }
        if quota[label] < by_label[label].len() {
            quota[label] += 1;
            short -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = BTreeMap::new();
    for (label, ids) in by_label.iter_mut().enumerate() {
        ids.shuffle(&mut rng);
        for (k, id) in ids.iter().enumerate() {
            let side = if k < quota[label] { Split::Test } else { Split::Train };
            split.insert((*id).to_string(), side);
        }
    }
    let mut out = dataset.clone();
    out.split = Some(split);
    Ok(out)
}

/// Draws the shared study pool from the test split without replacement.
pub fn sample_study_pool(dataset: &Dataset, pool_size: usize, seed: u64) -> Result<Vec<Instance>, DataError> {
    let test = dataset.part(Split::Test)?;
    if pool_size > test.len() {
        return Err(DataError::NotEnoughInstances {
            requested: pool_size,
            available: test.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, test.len(), pool_size);
    Ok(picked.into_iter().map(|i| test[i].clone()).collect())
}

/// Draws `k` distinct pool items in random order for one participant.
pub fn draw_participant_tasks(pool: &[Instance], k: usize, participant_seed: u64) -> Result<Vec<Instance>, DataError> {
    if k > pool.len() {
        return Err(DataError::NotEnoughInstances {
            requested: k,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(participant_seed);
    let mut items: Vec<&Instance> = pool.iter().collect();
    let (chosen, _) = items.partial_shuffle(&mut rng, k);
    Ok(chosen.iter().map(|i| (*i).clone()).collect())
}
