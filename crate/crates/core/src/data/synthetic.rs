use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Codebook, DataError, Dataset, FeatureSpec, Instance, ProtectedAttribute, Value};

pub const SYNTHETIC_CATEGORIES: [&str; 3] = ["A", "B", "C"];
pub const SYNTHETIC_GROUP: &str = "group";
const MINORITY_SHARE: f64 = 0.3;

/// Parameters of a synthetic decision dataset.
///
/// * `num_1..num_d` are standard normal, rounded to 4 decimals.
/// * `cat_1..cat_d` are uniform over `A`, `B`, `C` and enter the logit with
///   codes -1, 0, +1.
/// * `group` is a binary protected attribute, 1 (minority) with probability
///   0.3, that does not enter the logit.
///
/// Labels are Bernoulli(sigmoid(bias + w . x)) with `w = true_weights`
/// ordered numeric features first.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d_numeric: usize,
    pub d_categorical: usize,
    pub true_weights: Vec<f64>,
    pub bias: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d_numeric: usize, d_categorical: usize, true_weights: Vec<f64>, seed: u64) -> Self {
        Self {
            n,
            d_numeric,
            d_categorical,
            true_weights,
            bias: 0.0,
            seed,
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let expected = spec.d_numeric + spec.d_categorical;
    if spec.true_weights.len() != expected {
        return Err(DataError::WeightLength {
            expected,
            actual: spec.true_weights.len(),
        });
    }
    if spec.n == 0 {
        return Err(DataError::TooFewInstances { needed: 1, actual: 0 });
    }

    let mut features = Vec::new();
    for j in 1..=spec.d_numeric {
        features.push(FeatureSpec::numeric(
            format!("num_{j}"),
            format!("Synthetic standard-normal measurement {j}"),
        ));
    }
    for j in 1..=spec.d_categorical {
        features.push(FeatureSpec::categorical(
            format!("cat_{j}"),
            format!("Synthetic three-level category {j}"),
            SYNTHETIC_CATEGORIES,
        ));
    }
    let mut group = FeatureSpec::binary(SYNTHETIC_GROUP, "Synthetic protected group membership");
    group.long_explanation = Some("1 marks the minority group, 0 the majority group.".into());
    features.push(group);
    let display_order = features.iter().map(|f| f.name.clone()).collect();
    let codebook = Codebook {
        dataset_name: "synthetic".into(),
        features,
        label_name: "label".into(),
        positive_label_meaning: "positive outcome".into(),
        negative_label_meaning: Some("negative outcome".into()),
        protected_attributes: vec![ProtectedAttribute {
            feature: SYNTHETIC_GROUP.into(),
            minority: "1".into(),
            majority: "0".into(),
        }],
        display_order,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n.to_string().len();
    let mut instances = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut values = BTreeMap::new();
        let mut logit = spec.bias;
        for j in 0..spec.d_numeric {
            let z: f64 = StandardNormal.sample(&mut rng);
            let z = (z * 1e4).round() / 1e4;
            logit += spec.true_weights[j] * z;
            values.insert(format!("num_{}", j + 1), Value::Number(z));
        }
        for j in 0..spec.d_categorical {
            let k = rng.random_range(0..SYNTHETIC_CATEGORIES.len());
            logit += spec.true_weights[spec.d_numeric + j] * (k as f64 - 1.0);
            values.insert(
                format!("cat_{}", j + 1),
                Value::Category(SYNTHETIC_CATEGORIES[k].into()),
            );
        }
        let minority = rng.random_bool(MINORITY_SHARE);
        values.insert(SYNTHETIC_GROUP.into(), Value::Number(f64::from(u8::from(minority))));
        let p = 1.0 / (1.0 + (-logit).exp());
        let label = u8::from(rng.random_bool(p));
        instances.push(Instance {
            id: format!("s{i:0width$}"),
            values,
            label,
        });
    }
    Dataset::new(codebook, instances)
}
