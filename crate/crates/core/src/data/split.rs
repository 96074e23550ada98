use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Whole identities go to one partition (verification protocol).
    IdentityDisjoint,
    /// Individual samples are shuffled (attribute tasks).
    SampleLevel,
}

/// Partitions `ds` into (train, dev, test) by the given fractions.
pub fn split_by_identity(
    ds: &Dataset,
    fractions: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match mode {
        SplitMode::IdentityDisjoint => ds.by_identity().into_values().collect(),
        SplitMode::SampleLevel => (0..ds.len()).map(|i| vec![i]).collect(),
    };
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);

    let n = groups.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_dev;
    for (name, f, count) in [
        ("train", fractions[0], n_train),
        ("dev", fractions[1], n_dev),
        ("test", fractions[2], n_test),
    ] {
        if f > 0.0 && count == 0 {
            return Err(Error::Config(format!(
                "{name} split would be empty ({n} groups, fraction {f})"
            )));
        }
    }
    let collect = |range: std::ops::Range<usize>| -> Vec<usize> {
        let mut idx: Vec<usize> = order[range].iter().flat_map(|&g| groups[g].iter().copied()).collect();
        idx.sort_unstable();
        idx
    };
    let train = collect(0..n_train);
    let dev = collect(n_train..n_train + n_dev);
    let test = collect(n_train + n_dev..n);
    Ok((
        ds.subset(&train, "train"),
        ds.subset(&dev, "dev"),
        ds.subset(&test, "test"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenConfig};
    use std::collections::BTreeSet;

    fn ds() -> Dataset {
        generate_dataset(&GenConfig {
            num_identities: 100,
            dim: 80,
            identity_dim: 60,
            ..GenConfig::default()
        })
        .unwrap()
    }

    fn ids(d: &Dataset) -> BTreeSet<usize> {
        d.samples.iter().map(|s| s.identity).collect()
    }

    #[test]
    fn identity_disjoint_eighty_twenty() {
        let d = ds();
        let (train, dev, test) = split_by_identity(&d, [0.8, 0.0, 0.2], 3, SplitMode::IdentityDisjoint).unwrap();
        assert_eq!(ids(&train).len(), 80);
        assert_eq!(ids(&test).len(), 20);
        assert!(dev.is_empty());
        assert!(ids(&train).is_disjoint(&ids(&test)));
        assert_eq!(train.len() + test.len(), d.len());
    }

    #[test]
    fn full_train_and_determinism() {
        let d = ds();
        let (train, dev, test) = split_by_identity(&d, [1.0, 0.0, 0.0], 3, SplitMode::SampleLevel).unwrap();
        assert_eq!(train.samples, d.samples);
        assert!(dev.is_empty() && test.is_empty());
        let a = split_by_identity(&d, [0.6, 0.2, 0.2], 9, SplitMode::SampleLevel).unwrap();
        let b = split_by_identity(&d, [0.6, 0.2, 0.2], 9, SplitMode::SampleLevel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_split_is_config_error() {
        let d = ds().subset(&[0, 1, 2, 3, 4, 5, 6, 7], "tiny");
        let err = split_by_identity(&d, [0.9, 0.05, 0.05], 0, SplitMode::IdentityDisjoint).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(split_by_identity(&d, [0.5, 0.2, 0.2], 0, SplitMode::SampleLevel).is_err());
    }
}
