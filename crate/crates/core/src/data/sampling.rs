use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Indices into the owning dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationPair {
    pub sample_a: usize,
    pub sample_b: usize,
    pub same_identity: bool,
}

/// Uniform random triplets: an anchor identity with at least two samples, two
/// distinct samples of it, and one sample of any other identity.
pub fn sample_triplets(ds: &Dataset, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let groups: Vec<Vec<usize>> = ds.by_identity().into_values().collect();
    if groups.len() < 2 {
        return Err(Error::Data(format!(
            "triplets need at least 2 identities, dataset has {}",
            groups.len()
        )));
    }
    let eligible: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::Data("no identity has 2 or more samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let g = *eligible.choose(&mut rng).expect("non-empty");
        let members = &groups[g];
        let a = rng.random_range(0..members.len());
        let mut p = rng.random_range(0..members.len() - 1);
        if p >= a {
            p += 1;
        }
        let mut ng = rng.random_range(0..groups.len() - 1);
        if ng >= g {
            ng += 1;
        }
        let negative = *groups[ng].choose(&mut rng).expect("non-empty group");
        out.push(Triplet {
            anchor: members[a],
            positive: members[p],
            negative,
        });
    }
    Ok(out)
}

/// Balanced genuine/impostor pairs (`ceil(count/2)` genuine).
pub fn build_verification_pairs(ds: &Dataset, count: usize, seed: u64) -> Result<Vec<VerificationPair>> {
    let groups: Vec<Vec<usize>> = ds.by_identity().into_values().collect();
    if groups.len() < 2 {
        return Err(Error::Data(format!(
            "verification pairs need at least 2 identities, dataset has {}",
            groups.len()
        )));
    }
    let multi: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].len() >= 2).collect();
    let genuine = count.div_ceil(2);
    if genuine > 0 && multi.is_empty() {
        return Err(Error::Data("no identity has 2 or more samples for genuine pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        if k % 2 == 0 {
            let g = *multi.choose(&mut rng).expect("non-empty");
            let members = &groups[g];
            let a = rng.random_range(0..members.len());
            let mut b = rng.random_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            pairs.push(VerificationPair {
                sample_a: members[a],
                sample_b: members[b],
                same_identity: true,
            });
        } else {
            let g = rng.random_range(0..groups.len());
            let mut h = rng.random_range(0..groups.len() - 1);
            if h >= g {
                h += 1;
            }
            pairs.push(VerificationPair {
                sample_a: *groups[g].choose(&mut rng).expect("non-empty"),
                sample_b: *groups[h].choose(&mut rng).expect("non-empty"),
                same_identity: false,
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenConfig};

    fn ds(ids: usize, per: usize) -> Dataset {
        generate_dataset(&GenConfig {
            num_identities: ids,
            images_per_identity: per,
            dim: 80,
            identity_dim: 60,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn triplet_examples() {
        let d = ds(2, 2);
        assert!(sample_triplets(&d, 0, 1).unwrap().is_empty());
        let t = sample_triplets(&d, 8, 1).unwrap();
        assert_eq!(t.len(), 8);
        for tr in &t {
            let (a, p, n) = (&d.samples[tr.anchor], &d.samples[tr.positive], &d.samples[tr.negative]);
            assert_eq!(a.identity, p.identity);
            assert_ne!(a.identity, n.identity);
            assert_ne!(tr.anchor, tr.positive);
        }
        assert_eq!(t, sample_triplets(&d, 8, 1).unwrap());
        let single = ds(1, 6);
        assert!(matches!(sample_triplets(&single, 4, 0), Err(Error::Data(_))));
    }

    #[test]
    fn singleton_identities_are_skipped_as_anchors() {
        let d = ds(4, 2);
        // keep identity 0 whole, the others as singletons
        let keep: Vec<usize> = vec![0, 1, 2, 4, 6];
        let sub = d.subset(&keep, "mixed");
        for tr in sample_triplets(&sub, 50, 7).unwrap() {
            assert_eq!(sub.samples[tr.anchor].identity, 0);
        }
        let singles = d.subset(&[0, 2, 4], "singles");
        assert!(matches!(sample_triplets(&singles, 3, 0), Err(Error::Data(_))));
    }

    #[test]
    fn pairs_are_balanced_and_valid() {
        let d = ds(20, 6);
        let pairs = build_verification_pairs(&d, 100, 5).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.same_identity).count(), 50);
        for p in &pairs {
            assert_ne!(p.sample_a, p.sample_b);
            let same = d.samples[p.sample_a].identity == d.samples[p.sample_b].identity;
            assert_eq!(same, p.same_identity);
        }
        assert_eq!(pairs, build_verification_pairs(&d, 100, 5).unwrap());
        assert!(matches!(
            build_verification_pairs(&ds(1, 6), 10, 0),
            Err(Error::Data(_))
        ));
    }
}
