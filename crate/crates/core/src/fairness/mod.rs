//! Equality-of-opportunity study on a smiling-biased attractiveness task.
//!
//! The training split over-represents smiling among attractive samples and
//! under-represents it among the rest; the test split is smiling-balanced
//! within each class, so any TPR gap between smiling groups is learned bias.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Attribute, Dataset};
use crate::error::{Error, Result};
use crate::probes::Standardizer;
use crate::suppression::Representation;
use crate::tensor::{derive_seed, fit_classifier, Activation, DenseNet, HeadLoss, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    /// Smiling rate among attractive training samples.
    pub positive_class_smiling_rate: f64,
    /// Smiling rate among non-attractive training samples.
    pub negative_class_smiling_rate: f64,
    pub balance_gender: bool,
    /// Share of identities held out for the unbiased test split.
    pub test_identity_fraction: f64,
    /// Smallest acceptable number of training samples per attractiveness class.
    pub min_class_size: usize,
    pub seed: u64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            positive_class_smiling_rate: 0.70,
            negative_class_smiling_rate: 0.30,
            balance_gender: true,
            test_identity_fraction: 0.3,
            min_class_size: 20,
            seed: 0,
        }
    }
}

impl BiasSpec {
    pub fn unbiased() -> Self {
        BiasSpec {
            positive_class_smiling_rate: 0.5,
            negative_class_smiling_rate: 0.5,
            ..BiasSpec::default()
        }
    }

    pub fn is_biased(&self) -> bool {
        self.positive_class_smiling_rate != self.negative_class_smiling_rate
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("bias.positive_class_smiling_rate", self.positive_class_smiling_rate),
            ("bias.negative_class_smiling_rate", self.negative_class_smiling_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{key} = {v} must lie in [0, 1]")));
            }
        }
        if !(self.test_identity_fraction > 0.0 && self.test_identity_fraction < 1.0) {
            return Err(Error::Config(format!(
                "bias.test_identity_fraction = {} must lie in (0, 1)",
                self.test_identity_fraction
            )));
        }
        Ok(())
    }
}

/// Sample indices grouped as `cells[attractive][smiling][gender]`.
type Cells = [[[Vec<usize>; 2]; 2]; 2];

fn cells_of(ds: &Dataset, indices: impl Iterator<Item = usize>) -> Cells {
    let mut cells: Cells = Default::default();
    for i in indices {
        let s = &ds.samples[i];
        cells[s.attractive][s.smiling][s.gender].push(i);
    }
    cells
}

/// Per-gender quotas for `q` samples of one (attractive, smiling) cell.
fn gender_quota(q: usize, avail: [usize; 2], balance: bool) -> Option<[usize; 2]> {
    if !balance {
        if q > avail[0] + avail[1] {
            return None;
        }
        let g0 = q.min(avail[0]);
        return Some([g0, q - g0]);
    }
    let (lo, hi) = (q / 2, q - q / 2);
    if avail[0] >= hi && avail[1] >= lo {
        Some([hi, lo])
    } else if avail[0] >= lo && avail[1] >= hi {
        Some([lo, hi])
    } else {
        None
    }
}

/// Smiling and non-smiling counts for a class of size `c` at smiling rate `rate`.
fn class_quota(c: usize, rate: f64) -> [usize; 2] {
    let smiling = ((rate * c as f64).round() as usize).min(c);
    [c - smiling, smiling]
}

fn class_quotas(c: usize, rates: [f64; 2], cells: &Cells, balance: bool) -> Option<[[[usize; 2]; 2]; 2]> {
    let mut out = [[[0; 2]; 2]; 2];
    for a in 0..2 {
        let q = class_quota(c, rates[a]);
        for s in 0..2 {
            let avail = [cells[a][s][0].len(), cells[a][s][1].len()];
            out[a][s] = gender_quota(q[s], avail, balance)?;
        }
    }
    Some(out)
}

/// Splits `ds` by identity into a smiling-biased training set and a
/// smiling-balanced test set.
pub fn build_biased_split(ds: &Dataset, spec: &BiasSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let all = cells_of(ds, 0..ds.len());
    for a in 0..2 {
        for s in 0..2 {
            if all[a][s][0].is_empty() && all[a][s][1].is_empty() {
                return Err(Error::Data(format!("no samples with attractive={a}, smiling={s}")));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut identities: Vec<usize> = ds.by_identity().into_keys().collect();
    identities.shuffle(&mut rng);
    let n_test = (spec.test_identity_fraction * identities.len() as f64).round() as usize;
    if n_test == 0 || n_test == identities.len() {
        return Err(Error::Data(format!(
            "{} identities cannot be split with test fraction {}",
            identities.len(),
            spec.test_identity_fraction
        )));
    }
    let test_ids: std::collections::BTreeSet<usize> = identities[..n_test].iter().copied().collect();
    let in_test = |i: &usize| test_ids.contains(&ds.samples[*i].identity);
    let mut test_cells = cells_of(ds, (0..ds.len()).filter(|i| in_test(i)));
    let mut train_cells = cells_of(ds, (0..ds.len()).filter(|i| !in_test(i)));
    for cell in test_cells.iter_mut().chain(train_cells.iter_mut()).flatten().flatten() {
        cell.shuffle(&mut rng);
    }

    // train: largest balanced class size meeting the requested rates
    let rates = [spec.negative_class_smiling_rate, spec.positive_class_smiling_rate];
    let upper = (0..2)
        .map(|a| train_cells[a].iter().flatten().map(Vec::len).sum::<usize>())
        .min()
        .unwrap_or(0);
    let best = (spec.min_class_size.max(1)..=upper)
        .rev()
        .find_map(|c| class_quotas(c, rates, &train_cells, spec.balance_gender));
    let Some(quotas) = best else {
        let achievable: Vec<String> = (0..2)
            .map(|a| {
                let s: usize = train_cells[a][1].iter().map(Vec::len).sum();
                let n: usize = train_cells[a][0].iter().map(Vec::len).sum();
                format!("attractive={a}: {s} smiling / {n} non-smiling")
            })
            .collect();
        return Err(Error::Data(format!(
            "cannot meet smiling rates ({:.2}, {:.2}); available {}",
            spec.positive_class_smiling_rate,
            spec.negative_class_smiling_rate,
            achievable.join(", ")
        )));
    };
    let mut train = Vec::new();
    for a in 0..2 {
        for s in 0..2 {
            for g in 0..2 {
                train.extend_from_slice(&train_cells[a][s][g][..quotas[a][s][g]]);
            }
        }
    }

    // test: equal smiling and non-smiling counts within each class
    let mut test = Vec::new();
    for (a, class) in test_cells.iter().enumerate() {
        let pooled: [Vec<usize>; 2] = [
            interleave(&class[0][0], &class[0][1]),
            interleave(&class[1][0], &class[1][1]),
        ];
        let m = pooled[0].len().min(pooled[1].len());
        if m == 0 {
            return Err(Error::Data(format!(
                "test identities hold no {} samples with attractive={a}",
                if pooled[0].is_empty() { "non-smiling" } else { "smiling" }
            )));
        }
        test.extend_from_slice(&pooled[0][..m]);
        test.extend_from_slice(&pooled[1][..m]);
    }

    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train, "fair-train"), ds.subset(&test, "fair-test")))
}

/// Alternates between two lists so a prefix stays roughly gender balanced.
fn interleave(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..a.len().max(b.len()) {
        out.extend(a.get(i));
        out.extend(b.get(i));
    }
    out
}

/// Smiling rate within each attractiveness class: `[non-attractive, attractive]`.
pub fn smiling_rates(ds: &Dataset) -> [f64; 2] {
    let mut counts = [[0usize; 2]; 2];
    for s in &ds.samples {
        counts[s.attractive][s.smiling] += 1;
    }
    counts.map(|c| c[1] as f64 / (c[0] + c[1]).max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    /// Upper bound on the hidden width; the actual width is `min(max_hidden, 4·N)`.
    pub max_hidden: usize,
    /// Decision threshold on the sigmoid output.
    pub threshold: f64,
    pub repeats: usize,
    pub train: TrainConfig,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        FairnessConfig {
            max_hidden: 1024,
            threshold: 0.5,
            repeats: 5,
            train: TrainConfig {
                epochs: 10,
                batch_size: 64,
                ..TrainConfig::default()
            },
        }
    }
}

impl FairnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.max_hidden == 0 {
            return Err(Error::Config("fair.max_hidden must be ≥ 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("fair.threshold must lie in (0, 1)".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("fair.repeats must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Binary attractiveness classifier: one relu hidden layer and a sigmoid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractivenessHead {
    pub scaler: Standardizer,
    pub net: DenseNet,
    pub threshold: f64,
}

impl AttractivenessHead {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let xs = self.scaler.apply(x)?;
        Ok(self.net.predict(xs.view())?.column(0).to_owned())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(x)?
            .iter()
            .map(|&p| usize::from(p >= self.threshold))
            .collect())
    }
}

pub fn train_attractiveness_head(
    train: &Dataset,
    representation: Representation<'_>,
    cfg: &FairnessConfig,
) -> Result<AttractivenessHead> {
    cfg.validate()?;
    let labels = train.labels(Attribute::Attractive);
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::Data("attractiveness training split holds a single class".into()));
    }
    let x = representation.embed(train)?;
    let scaler = Standardizer::fit(x.view());
    let xs = scaler.apply(x.view())?;
    let n = xs.ncols();
    let hidden = cfg.max_hidden.min(4 * n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut net = DenseNet::random(
        "head-attractive",
        &[n, hidden, 1],
        &[Activation::Relu, Activation::Sigmoid],
        &mut rng,
    )?;
    fit_classifier(&mut net, xs.view(), &labels, HeadLoss::Binary, cfg.train.epochs, &cfg.train, cfg.train.seed)?;
    Ok(AttractivenessHead {
        scaler,
        net,
        threshold: cfg.threshold,
    })
}

/// Metrics of one trained head on one test split, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub accuracy: f64,
    pub tpr_smiling: f64,
    pub tpr_not_smiling: f64,
    pub eq_opp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub representation: String,
    /// Mean over repeats, in percent.
    pub accuracy: f64,
    pub tpr_smiling: f64,
    pub tpr_not_smiling: f64,
    /// `100 − (tpr_smiling − tpr_not_smiling)`.
    pub eq_opp: f64,
    pub repeats: usize,
    pub per_repeat: Vec<RepeatResult>,
}

impl FairnessReport {
    pub fn tpr_gap(&self) -> f64 {
        self.tpr_smiling - self.tpr_not_smiling
    }

    /// Averages repeat results; the mean TPRs determine `eq_opp`.
    pub fn aggregate(representation: impl Into<String>, per_repeat: Vec<RepeatResult>) -> Result<Self> {
        if per_repeat.is_empty() {
            return Err(Error::Argument("no repeats to aggregate".into()));
        }
        let k = per_repeat.len() as f64;
        let mean = |f: fn(&RepeatResult) -> f64| per_repeat.iter().map(f).sum::<f64>() / k;
        let tpr_smiling = mean(|r| r.tpr_smiling);
        let tpr_not_smiling = mean(|r| r.tpr_not_smiling);
        Ok(FairnessReport {
            representation: representation.into(),
            accuracy: mean(|r| r.accuracy),
            tpr_smiling,
            tpr_not_smiling,
            eq_opp: eq_opp_from_tprs(tpr_smiling, tpr_not_smiling),
            repeats: per_repeat.len(),
            per_repeat,
        })
    }
}

pub fn eq_opp_from_tprs(tpr_smiling: f64, tpr_not_smiling: f64) -> f64 {
    100.0 - (tpr_smiling - tpr_not_smiling)
}

/// Accuracy and per-smiling-group true-positive rates of binary predictions.
pub fn equality_of_opportunity(predictions: &[usize], attractive: &[usize], smiling: &[usize]) -> Result<RepeatResult> {
    if predictions.len() != attractive.len() || predictions.len() != smiling.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} attractive labels, {} smiling labels",
            predictions.len(),
            attractive.len(),
            smiling.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("no samples to score".into()));
    }
    let correct = predictions.iter().zip(attractive).filter(|(p, y)| p == y).count();
    let mut hits = [0usize; 2];
    let mut positives = [0usize; 2];
    for i in 0..predictions.len() {
        if attractive[i] == 1 {
            positives[smiling[i]] += 1;
            hits[smiling[i]] += usize::from(predictions[i] == 1);
        }
    }
    let mut tpr = [0.0; 2];
    for (g, name) in [(0, "not smiling"), (1, "smiling")] {
        if positives[g] == 0 {
            return Err(Error::UndefinedMetric(format!("TPR undefined: no attractive samples in group '{name}'")));
        }
        tpr[g] = 100.0 * hits[g] as f64 / positives[g] as f64;
    }
    Ok(RepeatResult {
        accuracy: 100.0 * correct as f64 / predictions.len() as f64,
        tpr_smiling: tpr[1],
        tpr_not_smiling: tpr[0],
        eq_opp: eq_opp_from_tprs(tpr[1], tpr[0]),
    })
}

/// Repeats split construction and head training, one report per representation.
///
/// Repeat `r` draws its split from `derive_seed(spec.seed, [r])` and its head
/// initialisation from `derive_seed(cfg.train.seed, [r])`; every
/// representation in a repeat sees the same split and seed.
pub fn run_fairness_experiment(
    ds: &Dataset,
    spec: &BiasSpec,
    representations: &[Representation<'_>],
    cfg: &FairnessConfig,
) -> Result<Vec<FairnessReport>> {
    cfg.validate()?;
    let mut results = vec![Vec::with_capacity(cfg.repeats); representations.len()];
    for r in 0..cfg.repeats as u64 {
        let split_spec = BiasSpec {
            seed: derive_seed(spec.seed, &[r]),
            ..spec.clone()
        };
        let (train, test) = build_biased_split(ds, &split_spec)?;
        let head_cfg = FairnessConfig {
            train: TrainConfig {
                seed: derive_seed(cfg.train.seed, &[r]),
                ..cfg.train.clone()
            },
            ..cfg.clone()
        };
        let attractive = test.labels(Attribute::Attractive);
        let smiling = test.labels(Attribute::Smiling);
        for (rep, out) in representations.iter().zip(results.iter_mut()) {
            let head = train_attractiveness_head(&train, *rep, &head_cfg)?;
            let pred = head.predict(rep.embed(&test)?.view())?;
            out.push(equality_of_opportunity(&pred, &attractive, &smiling)?);
        }
    }
    let split = if spec.is_biased() { "biased" } else { "unbiased" };
    representations
        .iter()
        .zip(results)
        .map(|(rep, per)| FairnessReport::aggregate(format!("{} ({split})", rep.tag()), per))
        .collect()
}

/// Comma-separated summary with one row per report, two decimals.
pub fn fairness_table_csv(reports: &[FairnessReport]) -> String {
    let mut out = String::from("method,accuracy,tpr_smiling,tpr_not_smiling,eq_opp\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.2}",
            r.representation, r.accuracy, r.tpr_smiling, r.tpr_not_smiling, r.eq_opp
        );
    }
    out
}
