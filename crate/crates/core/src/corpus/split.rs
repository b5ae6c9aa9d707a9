use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnnotatedInstance;
use crate::biasspec::BiasType;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self> {
        let f = SplitFractions { train, dev, test };
        if [train, dev, test].iter().any(|v| !(0.0..=1.0).contains(v)) || (train + dev + test - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "fractions",
                format!("({train}, {dev}, {test}) must be in [0, 1] and sum to 1"),
            ));
        }
        Ok(f)
    }

    /// Fractions reproducing the given portion sizes.
    pub fn from_counts(train: usize, dev: usize, test: usize) -> Self {
        let n = (train + dev + test) as f64;
        SplitFractions {
            train: train as f64 / n,
            dev: dev as f64 / n,
            test: test as f64 / n,
        }
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            dev: 0.2,
            test: 0.2,
        }
    }
}

/// Biased phrases partitioned for debiasing (train), model selection (dev)
/// and bias measurement (test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub bias_type: BiasType,
    pub seed: u64,
    pub train: Vec<AnnotatedInstance>,
    pub dev: Vec<AnnotatedInstance>,
    pub test: Vec<AnnotatedInstance>,
}

impl DataSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.dev.len(), self.test.len())
    }
}

/// Shuffles the phrase-level biased instances with `seed` and cuts them
/// into train/dev/test. Dev and test sizes are `floor(fraction * n)`; the
/// rounding remainder goes to train.
pub fn split_instances(
    instances: &[AnnotatedInstance],
    bias_type: BiasType,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DataSplit> {
    SplitFractions::new(fractions.train, fractions.dev, fractions.test)?;
    let mut biased: Vec<AnnotatedInstance> = instances
        .iter()
        .filter(|i| i.bias_phrase == Some(true))
        .cloned()
        .collect();
    let n = biased.len();
    if n < 3 {
        return Err(Error::invalid(
            "instances",
            format!("need at least 3 biased phrases to split, got {n}"),
        ));
    }
    biased.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_dev = (fractions.dev * n as f64 + 1e-9).floor() as usize;
    let n_test = (fractions.test * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_dev - n_test;
    let test = biased.split_off(n_train + n_dev);
    let dev = biased.split_off(n_train);
    Ok(DataSplit {
        bias_type,
        seed,
        train: biased,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;

    use super::*;

    fn biased(n: usize) -> Vec<AnnotatedInstance> {
        (0..n)
            .map(|i| AnnotatedInstance {
                id: format!("i{i}"),
                attribute_in_window: true,
                comment: format!("jews are greedy {i}"),
                phrase: format!("jews are greedy {i}"),
                bias_sent: Some(true),
                bias_phrase: Some(true),
            })
            .collect()
    }

    #[test]
    fn table_sizes() {
        let f = SplitFractions::from_counts(720, 238, 238);
        let s = split_instances(&biased(1196), BiasType::Religion1, f, 1).unwrap();
        assert_eq!(s.sizes(), (720, 238, 238));
    }

    #[test]
    fn remainder_to_train() {
        let f = SplitFractions::new(0.8, 0.1, 0.1).unwrap();
        let s = split_instances(&biased(10), BiasType::Custom, f, 3).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
    }

    #[test]
    fn deterministic() {
        let f = SplitFractions::default();
        let a = split_instances(&biased(50), BiasType::Race, f, 11).unwrap();
        let b = split_instances(&biased(50), BiasType::Race, f, 11).unwrap();
        assert_eq!(a, b);
        let c = split_instances(&biased(50), BiasType::Race, f, 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn unbiased_filtered_and_too_few() {
        let mut data = biased(4);
        data[0].bias_phrase = Some(false);
        data[1].bias_phrase = None;
        assert!(split_instances(&data, BiasType::Custom, SplitFractions::default(), 0).is_err());
    }

    #[test]
    fn bad_fractions() {
        assert!(SplitFractions::new(0.5, 0.2, 0.2).is_err());
        assert!(SplitFractions::new(1.2, -0.1, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn partition(n in 3usize..200, seed in any::<u64>()) {
            let data = biased(n);
            let s = split_instances(&data, BiasType::Custom, SplitFractions::default(), seed).unwrap();
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for i in s.train.iter().chain(&s.dev).chain(&s.test) {
                *counts.entry(i.id.as_str()).or_default() += 1;
            }
            prop_assert_eq!(counts.len(), n);
            prop_assert!(counts.values().all(|&c| c == 1));
        }
    }
}
