//! Labeled synthetic embeddings with planted identity and attribute factors,
//! identity-aware splitting, triplet/pair sampling and a text file format.

mod generator;
mod io;
mod sampling;
mod split;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use generator::{generate_dataset, generate_with_latents, happy_smiling_rates, GenConfig, Generated, SyntheticWorld};
pub use io::{dataset_from_str, dataset_to_string, read_dataset, write_dataset, DATASET_TASKS};
pub use sampling::{build_verification_pairs, sample_triplets, Triplet, VerificationPair};
pub use split::{split_by_identity, SplitMode};

pub const NUM_EMOTIONS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Disgusted,
    Angry,
    Surprised,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_EMOTIONS] = [
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Disgusted,
        Emotion::Angry,
        Emotion::Surprised,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Label columns carried by every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    Identity,
    Emotion,
    Gender,
    Ethnicity,
    Attractive,
    Smiling,
}

impl Attribute {
    /// Class count for closed label sets; identity is open-ended.
    pub fn num_classes(self) -> Option<usize> {
        match self {
            Attribute::Identity => None,
            Attribute::Emotion => Some(NUM_EMOTIONS),
            Attribute::Gender | Attribute::Attractive | Attribute::Smiling => Some(2),
            Attribute::Ethnicity => Some(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Stable sample id within the originating dataset.
    pub id: usize,
    pub embedding: Vec<f64>,
    pub identity: usize,
    pub emotion: Emotion,
    pub gender: usize,
    pub ethnicity: usize,
    pub attractive: usize,
    pub smiling: usize,
}

impl LabeledSample {
    pub fn label(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::Identity => self.identity,
            Attribute::Emotion => self.emotion.index(),
            Attribute::Gender => self.gender,
            Attribute::Ethnicity => self.ethnicity,
            Attribute::Attractive => self.attractive,
            Attribute::Smiling => self.smiling,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if let Some(v) = self.embedding.iter().find(|v| !v.is_finite()) {
            return Err(format!("sample {}: non-finite embedding value {v}", self.id));
        }
        for attr in [Attribute::Gender, Attribute::Ethnicity, Attribute::Attractive, Attribute::Smiling] {
            let c = attr.num_classes().expect("closed label set");
            if self.label(attr) >= c {
                return Err(format!(
                    "sample {}: {attr:?} label {} outside 0..{c}",
                    self.id,
                    self.label(attr)
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Generated(GenConfig),
    File(PathBuf),
    Derived(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub provenance: Provenance,
    /// Seed of the mixing matrix and prototypes; `None` for external files.
    pub mixing_seed: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.embedding.len())
    }

    pub fn embeddings(&self) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((self.len(), d));
        for (mut row, s) in out.rows_mut().into_iter().zip(&self.samples) {
            row.as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&s.embedding);
        }
        out
    }

    pub fn labels(&self, attr: Attribute) -> Vec<usize> {
        self.samples.iter().map(|s| s.label(attr)).collect()
    }

    /// Sample indices grouped by identity, in identity order.
    pub fn by_identity(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.identity).or_default().push(i);
        }
        map
    }

    pub fn subset(&self, indices: &[usize], tag: &str) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: Provenance::Derived(tag.to_string()),
            mixing_seed: self.mixing_seed,
        }
    }

    /// Replaces every embedding with a transformed one (same sample order).
    pub fn with_embeddings(&self, embeddings: &Array2<f64>, tag: &str) -> Dataset {
        let samples = self
            .samples
            .iter()
            .zip(embeddings.rows())
            .map(|(s, row)| LabeledSample {
                embedding: row.to_vec(),
                ..s.clone()
            })
            .collect();
        Dataset {
            samples,
            provenance: Provenance::Derived(tag.to_string()),
            mixing_seed: self.mixing_seed,
        }
    }
}
