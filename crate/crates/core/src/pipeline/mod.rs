//! End-to-end experiment recipes shared by the command-line front end and
//! the acceptance suite.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{AblationConfig, ExperimentConfig, SplitConfig, OUT_ENV};
pub use report::{
    ablation_csv, ablation_svg, accuracy_table_csv, emit_report, AccuracyRow, BlindedCell, MetricsReport, Section,
    Timings, VarianceRow,
};

use crate::data::{build_verification_pairs, generate_dataset, read_dataset, split_by_identity, Dataset, SplitMode};
use crate::error::{Error, Result};
use crate::fairness::{run_fairness_experiment, BiasSpec, FairnessReport};
use crate::probes::{
    feature_ablation_curve, train_probe, verification_accuracy, AblationCurve, PairSet, ProbeKind, TaskSpec,
};
use crate::suppression::{train_lnl, train_sensitivenets, Representation, Suppressor, SuppressorKind};
use crate::tensor::derive_seed;

/// Stage constants folded into the master seed.
pub mod stage {
    pub const GENERATE: u64 = 1;
    pub const MIXING: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const SN: u64 = 4;
    pub const LNL: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const PAIRS: u64 = 7;
    pub const ABLATE: u64 = 8;
    pub const FAIR_SPLIT: u64 = 9;
    pub const FAIR_HEAD: u64 = 10;
}

pub fn stage_seed(master: u64, stage: u64) -> u64 {
    derive_seed(master, &[stage])
}

pub const DATASET_FILE: &str = "dataset.txt";
pub const METRICS_FILE: &str = "metrics.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const CONFIG_FILE: &str = "config.txt";

pub fn suppressor_file(kind: SuppressorKind) -> String {
    format!("suppressor_{}.txt", kind.code())
}

/// Copy of `cfg` with every per-stage seed replaced by one derived from the
/// master seed.
pub fn seeded(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    let m = cfg.seed;
    c.gen.seed = stage_seed(m, stage::GENERATE);
    c.gen.mixing_seed = stage_seed(m, stage::MIXING);
    c.probe.train.seed = stage_seed(m, stage::PROBE);
    c.bias.seed = stage_seed(m, stage::FAIR_SPLIT);
    c.fair.train.seed = stage_seed(m, stage::FAIR_HEAD);
    c
}

/// Stable identifier of a configuration (FNV-1a over its text form, output
/// directory excluded).
pub fn experiment_id(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in c.to_text().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("seed{}-{h:016x}", cfg.seed)
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate_dataset(&seeded(cfg).gen)
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn new(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Self> {
        let f = &cfg.split.fractions;
        if f.len() != 3 {
            return Err(Error::Config(format!("split.fractions needs 3 values, got {}", f.len())));
        }
        let (train, dev, test) = split_by_identity(
            ds,
            [f[0], f[1], f[2]],
            stage_seed(cfg.seed, stage::SPLIT),
            SplitMode::IdentityDisjoint,
        )?;
        Ok(Splits { train, dev, test })
    }
}

/// SN learns from the training split for both triplets and the adversary;
/// LnL keeps gender as its main task.
pub fn train_suppressor(cfg: &ExperimentConfig, splits: &Splits, kind: SuppressorKind) -> Result<Suppressor> {
    let mut sup = cfg.sup.clone();
    match kind {
        SuppressorKind::Sn => {
            sup.train.seed = stage_seed(cfg.seed, stage::SN);
            train_sensitivenets(&splits.train, &splits.train, &sup)
        }
        SuppressorKind::Lnl => {
            sup.train.seed = stage_seed(cfg.seed, stage::LNL);
            train_lnl(&splits.train, &TaskSpec::gender(), &sup)
        }
    }
}

/// Rows of the accuracy table, in order.
pub const ACCURACY_ROWS: [&str; 6] = ["identity", "gender", "ethnicity", "emotion-nn", "emotion-svm", "emotion-rf"];

fn representation_accuracies(cfg: &ExperimentConfig, splits: &Splits, rep: Representation<'_>) -> Result<Vec<f64>> {
    let probe_cfg = seeded(cfg).probe;
    let ed = rep.embed(&splits.dev)?;
    let et = rep.embed(&splits.test)?;
    let pair_seed = stage_seed(cfg.seed, stage::PAIRS);
    let pd = build_verification_pairs(&splits.dev, cfg.split.verification_pairs, derive_seed(pair_seed, &[0]))?;
    let pt = build_verification_pairs(&splits.test, cfg.split.verification_pairs, derive_seed(pair_seed, &[1]))?;
    let ver = verification_accuracy(
        PairSet {
            dataset: &splits.dev,
            embeddings: &ed,
            pairs: &pd,
        },
        PairSet {
            dataset: &splits.test,
            embeddings: &et,
            pairs: &pt,
        },
    )?;
    let mut out = vec![100.0 * ver.accuracy];
    let probes = [
        (TaskSpec::gender(), ProbeKind::Mlp),
        (TaskSpec::ethnicity(), ProbeKind::Mlp),
        (TaskSpec::emotion(), ProbeKind::Mlp),
        (TaskSpec::emotion(), ProbeKind::LinearHinge),
        (TaskSpec::emotion(), ProbeKind::RandomForest),
    ];
    for (task, kind) in probes {
        out.push(100.0 * train_probe(&splits.train, &splits.test, rep, &task, kind, &probe_cfg)?.test.accuracy);
    }
    Ok(out)
}

fn total_variance(x: &ndarray::Array2<f64>) -> f64 {
    x.var_axis(ndarray::Axis(0), 0.0).sum()
}

/// Accuracy table rows plus output-variance ratios for each suppressor.
pub fn evaluate_accuracy(
    cfg: &ExperimentConfig,
    splits: &Splits,
    suppressors: &[Suppressor],
) -> Result<(Vec<AccuracyRow>, Vec<VarianceRow>)> {
    let chance = [50.0, 50.0, 100.0 / 3.0, 100.0 / 6.0, 100.0 / 6.0, 100.0 / 6.0];
    let raw = representation_accuracies(cfg, splits, Representation::Raw)?;
    let mut rows: Vec<AccuracyRow> = ACCURACY_ROWS
        .iter()
        .zip(chance)
        .zip(&raw)
        .map(|((task, c), &r)| AccuracyRow::new(*task, c, r))
        .collect();
    let raw_var = total_variance(&splits.test.embeddings());
    let mut variance = Vec::new();
    for s in suppressors {
        let rep = Representation::Blinded(s);
        for (row, acc) in rows.iter_mut().zip(representation_accuracies(cfg, splits, rep)?) {
            row.push(rep.tag(), acc);
        }
        let ratio = if raw_var > 0.0 {
            total_variance(&rep.embed(&splits.test)?) / raw_var
        } else {
            0.0
        };
        variance.push(VarianceRow {
            method: rep.tag().to_string(),
            ratio,
        });
    }
    Ok((rows, variance))
}

/// Emotion MLP accuracy on raw embeddings with random coordinates zeroed.
pub fn run_ablation(cfg: &ExperimentConfig, splits: &Splits) -> Result<AblationCurve> {
    let task = TaskSpec::emotion();
    let xtr = splits.train.embeddings();
    let xte = splits.test.embeddings();
    feature_ablation_curve(
        xtr.view(),
        &task.labels(&splits.train)?,
        xte.view(),
        &task.labels(&splits.test)?,
        &task,
        &cfg.ablate.fractions,
        cfg.ablate.repeats,
        &seeded(cfg).probe,
        stage_seed(cfg.seed, stage::ABLATE),
    )
}

/// Biased-split reports for raw and every suppressor, then the unbiased raw row.
pub fn run_fairness(cfg: &ExperimentConfig, ds: &Dataset, suppressors: &[Suppressor]) -> Result<Vec<FairnessReport>> {
    let c = seeded(cfg);
    let mut reps = vec![Representation::Raw];
    reps.extend(suppressors.iter().map(Representation::Blinded));
    let mut out = run_fairness_experiment(ds, &c.bias, &reps, &c.fair)?;
    let unbiased = BiasSpec {
        positive_class_smiling_rate: 0.5,
        negative_class_smiling_rate: 0.5,
        ..c.bias.clone()
    };
    out.extend(run_fairness_experiment(ds, &unbiased, &[Representation::Raw], &c.fair)?);
    Ok(out)
}

/// Everything `all` produces, kept in memory.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dataset: Dataset,
    pub suppressors: Vec<Suppressor>,
    pub metrics: MetricsReport,
    pub timings: Timings,
}

fn timed<T>(timings: &mut Timings, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    timings.record(stage, t.elapsed().as_secs_f64());
    out
}

/// Runs every stage in order without touching the filesystem.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut timings = Timings::default();
    let dataset = timed(&mut timings, "generate", || generate(cfg))?;
    let splits = Splits::new(cfg, &dataset)?;
    let mut suppressors = Vec::new();
    for kind in [SuppressorKind::Sn, SuppressorKind::Lnl] {
        let s = timed(&mut timings, &format!("train_{}", kind.code()), || {
            train_suppressor(cfg, &splits, kind)
        })?;
        suppressors.push(s);
    }
    let (accuracy, variance) = timed(&mut timings, "probe", || evaluate_accuracy(cfg, &splits, &suppressors))?;
    let ablation = timed(&mut timings, "ablate", || run_ablation(cfg, &splits))?;
    let fairness = timed(&mut timings, "fairness", || run_fairness(cfg, &dataset, &suppressors))?;
    let metrics = MetricsReport {
        experiment_id: experiment_id(cfg),
        seed: cfg.seed,
        accuracy,
        variance,
        ablation: Some(ablation),
        fairness,
    };
    Ok(Outcome {
        dataset,
        suppressors,
        metrics,
        timings,
    })
}

/// Output directory and the files inside it.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let probe = root.join(".write-test");
        std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
        let _ = std::fs::remove_file(&probe);
        Ok(Workspace { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let p = self.path(DATASET_FILE);
        if !p.exists() {
            return Err(Error::Data(format!("{} not found; run 'generate' first", p.display())));
        }
        read_dataset(&p)
    }

    /// Suppressors already trained into this directory, SN first.
    pub fn suppressors(&self) -> Result<Vec<Suppressor>> {
        let mut out = Vec::new();
        for kind in [SuppressorKind::Sn, SuppressorKind::Lnl] {
            let p = self.path(&suppressor_file(kind));
            if p.exists() {
                out.push(Suppressor::load(&p)?);
            }
        }
        Ok(out)
    }

    /// Metrics saved so far, or an empty report for this configuration.
    pub fn metrics(&self, cfg: &ExperimentConfig) -> Result<MetricsReport> {
        let p = self.path(METRICS_FILE);
        if p.exists() {
            let m = MetricsReport::load(&p)?;
            if m.experiment_id == experiment_id(cfg) {
                return Ok(m);
            }
        }
        Ok(MetricsReport {
            experiment_id: experiment_id(cfg),
            seed: cfg.seed,
            ..MetricsReport::default()
        })
    }

    pub fn timings(&self) -> Timings {
        std::fs::read_to_string(self.path(TIMINGS_FILE))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (1..=10).map(|s| stage_seed(42, s)).collect();
        let unique: std::collections::BTreeSet<_> = seeds.iter().collect();
        assert_eq!(unique.len(), seeds.len());
        assert_eq!(stage_seed(42, stage::SN), stage_seed(42, stage::SN));
        assert_ne!(stage_seed(42, stage::SN), stage_seed(43, stage::SN));
    }

    #[test]
    fn experiment_id_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("/elsewhere");
        assert_eq!(experiment_id(&a), experiment_id(&b));
        b.gen.dim = 128;
        assert_ne!(experiment_id(&a), experiment_id(&b));
    }
}
