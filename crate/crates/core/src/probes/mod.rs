//! Probes measuring how much task information a representation carries.

mod ablation;
mod forest;
mod pca;
mod task;
mod verification;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ablation::{feature_ablation_curve, AblationCurve, AblationPoint};
pub use forest::{DecisionTree, ForestConfig, Node, RandomForest};
pub use pca::{centroid_separation, pca_project, Pca};
pub use task::{Task, TaskSpec};
pub use verification::{cosine_similarity, verification_accuracy, PairSet, VerificationResult};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::suppression::Representation;
use crate::tensor::{fit_classifier, predict_labels, Activation, DenseNet, HeadLoss, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    Mlp,
    LinearHinge,
    RandomForest,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::Mlp, ProbeKind::LinearHinge, ProbeKind::RandomForest];

    /// Short label used in tables.
    pub fn code(self) -> &'static str {
        match self {
            ProbeKind::Mlp => "nn",
            ProbeKind::LinearHinge => "svm",
            ProbeKind::RandomForest => "rf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub train: TrainConfig,
    /// L2 penalty of the hinge probe.
    pub svm_weight_decay: f64,
    pub forest: ForestConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 128,
            train: TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            },
            svm_weight_decay: 1e-3,
            forest: ForestConfig::default(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("probe.hidden must be ≥ 1".into()));
        }
        if !(self.svm_weight_decay >= 0.0) {
            return Err(Error::Config("probe.svm_weight_decay must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Per-feature standardization fitted on a training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Constant features get unit scale so they stay constant.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let std = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "probe expects {} features, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok((&x - &self.mean) / &self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeParams {
    Net(DenseNet),
    Forest(RandomForest),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub task: TaskSpec,
    pub scaler: Standardizer,
    pub params: ProbeParams,
}

impl ProbeModel {
    /// Fits a probe on a feature matrix with labels in `0..task.num_classes`.
    pub fn fit(x: ArrayView2<f64>, labels: &[usize], task: &TaskSpec, kind: ProbeKind, cfg: &ProbeConfig) -> Result<Self> {
        cfg.validate()?;
        if x.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.nrows(), labels.len())));
        }
        let first = labels.first().ok_or_else(|| Error::Data(format!("no training samples for '{}'", task.name)))?;
        if labels.iter().all(|y| y == first) {
            return Err(Error::Data(format!(
                "training split for '{}' holds a single class ({first})",
                task.name
            )));
        }
        let scaler = Standardizer::fit(x);
        let xs = scaler.apply(x)?;
        let n = x.ncols();
        let c = task.num_classes;
        let seed = cfg.train.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match kind {
            ProbeKind::Mlp => {
                let mut net = DenseNet::random(
                    format!("probe-{}-nn", task.name),
                    &[n, cfg.hidden, c],
                    &[Activation::Relu, Activation::Softmax],
                    &mut rng,
                )?;
                fit_classifier(&mut net, xs.view(), labels, HeadLoss::CrossEntropy, cfg.train.epochs, &cfg.train, seed)?;
                ProbeParams::Net(net)
            }
            ProbeKind::LinearHinge => {
                let mut net = DenseNet::random(format!("probe-{}-svm", task.name), &[n, c], &[Activation::Linear], &mut rng)?;
                let tc = TrainConfig {
                    weight_decay: cfg.svm_weight_decay,
                    ..cfg.train.clone()
                };
                fit_classifier(&mut net, xs.view(), labels, HeadLoss::OvrHinge, tc.epochs, &tc, seed)?;
                ProbeParams::Net(net)
            }
            ProbeKind::RandomForest => ProbeParams::Forest(RandomForest::fit(xs.view(), labels, c, &cfg.forest, seed)?),
        };
        Ok(ProbeModel {
            kind,
            task: task.clone(),
            scaler,
            params,
        })
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let xs = self.scaler.apply(x)?;
        Ok(match &self.params {
            ProbeParams::Net(net) => predict_labels(&net.predict(xs.view())?),
            ProbeParams::Forest(rf) => rf.predict(xs.view()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction of correct predictions.
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

pub fn evaluate_predictions(predictions: Vec<usize>, labels: &[usize], num_classes: usize) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty sample set".into()));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes || p >= num_classes {
            return Err(Error::Data(format!("label {y} or prediction {p} outside {num_classes} classes")));
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
        predictions,
    })
}

/// Accuracy and confusion matrix of `probe` on already-embedded samples.
pub fn evaluate_probe(probe: &ProbeModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<Evaluation> {
    if x.nrows() == 0 {
        return Err(Error::Data("cannot evaluate on an empty sample set".into()));
    }
    evaluate_predictions(probe.predict(x)?, labels, probe.task.num_classes)
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub model: ProbeModel,
    pub train_accuracy: f64,
    pub test: Evaluation,
}

/// Trains a probe on `train` and scores it on `test`, both seen through `representation`.
pub fn train_probe(
    train: &Dataset,
    test: &Dataset,
    representation: Representation<'_>,
    task: &TaskSpec,
    kind: ProbeKind,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let xtr = representation.embed(train)?;
    let xte = representation.embed(test)?;
    let ytr = task.labels(train)?;
    let yte = task.labels(test)?;
    let model = ProbeModel::fit(xtr.view(), &ytr, task, kind, cfg)?;
    let train_accuracy = evaluate_probe(&model, xtr.view(), &ytr)?.accuracy;
    let test = evaluate_probe(&model, xte.view(), &yte)?;
    Ok(ProbeResult {
        model,
        train_accuracy,
        test,
    })
}

/// Accuracy drop relative to chance, in percent: `100·(before − after)/(before − chance)`.
pub fn diff_metric(before: f64, after: f64, chance: f64) -> Result<f64> {
    if !(before > chance) {
        return Err(Error::UndefinedMetric(format!(
            "Diff needs before ({before}) above chance ({chance})"
        )));
    }
    Ok(100.0 * ((before - after) / (before - chance)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Attribute, GenConfig};
    use rand::seq::SliceRandom;

    #[test]
    fn diff_reference_values() {
        assert!((diff_metric(88.1, 59.6, 16.67).unwrap() - 39.9).abs() < 0.1);
        assert!((diff_metric(88.1, 16.7, 16.67).unwrap() - 100.0).abs() < 0.1);
        assert_eq!(diff_metric(70.0, 70.0, 50.0).unwrap(), 0.0);
        assert!(matches!(diff_metric(50.0, 40.0, 50.0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn single_sample_probe_fits_itself() {
        let x = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = ProbeConfig {
            train: TrainConfig {
                learning_rate: 0.05,
                ..ProbeConfig::default().train
            },
            ..ProbeConfig::default()
        };
        for kind in ProbeKind::ALL {
            let p = ProbeModel::fit(x.view(), &[0, 1], &TaskSpec::gender(), kind, &cfg).unwrap();
            let e = evaluate_probe(&p, x.slice(ndarray::s![0..1, ..]), &[0]).unwrap();
            assert_eq!(e.accuracy, 1.0, "{kind:?}");
        }
    }

    #[test]
    fn confusion_bookkeeping() {
        let e = evaluate_predictions(vec![0, 1, 1, 2, 0], &[0, 1, 2, 2, 1], 3).unwrap();
        let total: usize = e.confusion.iter().flatten().sum();
        assert_eq!(total, 5);
        assert_eq!(e.confusion[2].iter().sum::<usize>(), 2);
        let recount = e.predictions.iter().zip([0, 1, 2, 2, 1]).filter(|(p, y)| **p == *y).count();
        assert_eq!(e.accuracy, recount as f64 / 5.0);
        assert!(matches!(evaluate_predictions(vec![], &[], 3), Err(Error::Data(_))));
    }

    #[test]
    fn single_class_training_is_data_error() {
        let x = Array2::zeros((3, 2));
        let err = ProbeModel::fit(x.view(), &[1, 1, 1], &TaskSpec::gender(), ProbeKind::Mlp, &ProbeConfig::default());
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn shuffled_labels_give_chance_accuracy() {
        let ds = generate_dataset(&GenConfig {
            num_identities: 60,
            dim: 96,
            ..GenConfig::default()
        })
        .unwrap();
        let x = ds.embeddings();
        let mut total = 0.0;
        for seed in 0..5u64 {
            let mut y = ds.labels(Attribute::Emotion);
            y.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (tr, te) = (0..240, 240..360);
            let cfg = ProbeConfig {
                train: TrainConfig {
                    epochs: 20,
                    seed,
                    ..TrainConfig::default()
                },
                ..ProbeConfig::default()
            };
            let p = ProbeModel::fit(x.slice(ndarray::s![tr.clone(), ..]), &y[tr], &TaskSpec::emotion(), ProbeKind::Mlp, &cfg).unwrap();
            total += evaluate_probe(&p, x.slice(ndarray::s![te.clone(), ..]), &y[te]).unwrap().accuracy;
        }
        let mean = 100.0 * total / 5.0;
        assert!((mean - 100.0 / 6.0).abs() < 5.0, "mean shuffled accuracy {mean}");
    }
}
