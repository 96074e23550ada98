use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, VerificationPair};
use crate::error::{Error, Result};

/// Pairs over one dataset together with that dataset's embedded samples.
#[derive(Debug, Clone, Copy)]
pub struct PairSet<'a> {
    pub dataset: &'a Dataset,
    pub embeddings: &'a Array2<f64>,
    pub pairs: &'a [VerificationPair],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    /// Test-pair accuracy as a fraction.
    pub accuracy: f64,
    pub threshold: f64,
    pub dev_accuracy: f64,
}

pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.dot(&b) / (na * nb))
}

fn scored(set: &PairSet<'_>) -> Result<Vec<(f64, bool)>> {
    if set.embeddings.nrows() != set.dataset.len() {
        return Err(Error::Shape(format!(
            "{} embedded rows for {} samples",
            set.embeddings.nrows(),
            set.dataset.len()
        )));
    }
    set.pairs
        .iter()
        .map(|p| {
            let a = set.embeddings.row(p.sample_a);
            let b = set.embeddings.row(p.sample_b);
            let sim = cosine_similarity(a, b).ok_or_else(|| {
                let zero = if a.dot(&a) == 0.0 { p.sample_a } else { p.sample_b };
                Error::Numeric(format!("zero-norm embedding for sample {}", set.dataset.samples[zero].id))
            })?;
            Ok((sim, p.same_identity))
        })
        .collect()
}

fn accuracy_at(scores: &[(f64, bool)], t: f64) -> f64 {
    scores.iter().filter(|(s, same)| (*s >= t) == *same).count() as f64 / scores.len() as f64
}

fn check_set(name: &str, scores: &[(f64, bool)]) -> Result<()> {
    let genuine = scores.iter().filter(|s| s.1).count();
    if scores.len() < 2 || genuine == 0 || genuine == scores.len() {
        return Err(Error::Data(format!(
            "{name} pairs need ≥ 2 pairs with both classes ({} pairs, {genuine} genuine)",
            scores.len()
        )));
    }
    Ok(())
}

/// Picks the cosine threshold maximizing dev accuracy and reports test accuracy.
pub fn verification_accuracy(dev: PairSet<'_>, test: PairSet<'_>) -> Result<VerificationResult> {
    let ids = |set: &PairSet<'_>| -> BTreeSet<usize> {
        set.pairs
            .iter()
            .flat_map(|p| [set.dataset.samples[p.sample_a].id, set.dataset.samples[p.sample_b].id])
            .collect()
    };
    if let Some(shared) = ids(&dev).intersection(&ids(&test)).next() {
        return Err(Error::Argument(format!("sample {shared} appears in both dev and test pairs")));
    }
    let dev_scores = scored(&dev)?;
    let test_scores = scored(&test)?;
    check_set("dev", &dev_scores)?;
    check_set("test", &test_scores)?;

    let mut sims: Vec<f64> = dev_scores.iter().map(|s| s.0).collect();
    sims.sort_by(f64::total_cmp);
    sims.dedup();
    let mut candidates = vec![sims[0] - 1e-9];
    candidates.extend(sims.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(sims[sims.len() - 1] + 1e-9);
    let mut threshold = candidates[0];
    let mut dev_accuracy = accuracy_at(&dev_scores, threshold);
    for &t in &candidates[1..] {
        let a = accuracy_at(&dev_scores, t);
        if a > dev_accuracy {
            dev_accuracy = a;
            threshold = t;
        }
    }
    Ok(VerificationResult {
        accuracy: accuracy_at(&test_scores, threshold),
        threshold,
        dev_accuracy,
    })
}
