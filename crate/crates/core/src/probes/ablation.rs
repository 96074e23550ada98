use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_probe, ProbeConfig, ProbeKind, ProbeModel, TaskSpec};
use crate::error::{Error, Result};
use crate::tensor::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub fraction: f64,
    /// Number of coordinates zeroed.
    pub zeroed: usize,
    pub mean: f64,
    pub std: f64,
    /// Per-repeat test accuracies (fractions).
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub task: String,
    pub repeats: usize,
    pub points: Vec<AblationPoint>,
}

impl AblationCurve {
    pub fn point(&self, fraction: f64) -> Option<&AblationPoint> {
        self.points.iter().find(|p| (p.fraction - fraction).abs() < 1e-12)
    }
}

fn zero_columns(x: ArrayView2<f64>, cols: &[usize]) -> Array2<f64> {
    let mut out = x.to_owned();
    for &c in cols {
        out.column_mut(c).fill(0.0);
    }
    out
}

/// Retrains an MLP probe with a random subset of coordinates zeroed.
///
/// Cell `(i, r)` draws its mask from `(seed, i, r)` and trains the probe with
/// seed `cfg.train.seed + r`.
#[allow(clippy::too_many_arguments)]
pub fn feature_ablation_curve(
    x_train: ArrayView2<f64>,
    y_train: &[usize],
    x_test: ArrayView2<f64>,
    y_test: &[usize],
    task: &TaskSpec,
    fractions: &[f64],
    repeats: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<AblationCurve> {
    if repeats == 0 {
        return Err(Error::Config("ablation repeats must be ≥ 1".into()));
    }
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
        return Err(Error::Config("ablation fractions must lie in [0, 1)".into()));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("ablation fractions must be strictly increasing".into()));
    }
    let n = x_train.ncols();
    let mut points = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        let zeroed = (fraction * n as f64).ceil() as usize;
        if zeroed >= n {
            return Err(Error::Data(format!(
                "suppressing {:.2}% of {n} features leaves none",
                100.0 * fraction
            )));
        }
        let mut accuracies = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[fi as u64, r as u64]));
            let cols = sample(&mut rng, n, zeroed).into_vec();
            let xtr = zero_columns(x_train, &cols);
            let xte = zero_columns(x_test, &cols);
            let mut cell_cfg = cfg.clone();
            cell_cfg.train.seed = cfg.train.seed.wrapping_add(r as u64);
            let probe = ProbeModel::fit(xtr.view(), y_train, task, ProbeKind::Mlp, &cell_cfg)?;
            accuracies.push(evaluate_probe(&probe, xte.view(), y_test)?.accuracy);
        }
        let mean = accuracies.iter().sum::<f64>() / repeats as f64;
        let std = if repeats > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
        } else {
            0.0
        };
        points.push(AblationPoint {
            fraction,
            zeroed,
            mean,
            std,
            accuracies,
        });
    }
    Ok(AblationCurve {
        task: task.name.clone(),
        repeats,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TrainConfig;

    fn toy() -> (Array2<f64>, Vec<usize>) {
        let x = Array2::from_shape_fn((60, 10), |(i, j)| if j % 2 == i % 2 { 1.0 } else { -1.0 } + 0.01 * j as f64);
        (x, (0..60).map(|i| i % 2).collect())
    }

    fn cfg() -> ProbeConfig {
        ProbeConfig {
            hidden: 8,
            train: TrainConfig {
                epochs: 5,
                batch_size: 16,
                ..TrainConfig::default()
            },
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn fraction_zero_matches_plain_probe() {
        let (x, y) = toy();
        let c = cfg();
        let curve = feature_ablation_curve(x.view(), &y, x.view(), &y, &TaskSpec::gender(), &[0.0, 0.5], 2, &c, 3).unwrap();
        let plain = ProbeModel::fit(x.view(), &y, &TaskSpec::gender(), ProbeKind::Mlp, &c).unwrap();
        let acc = evaluate_probe(&plain, x.view(), &y).unwrap().accuracy;
        assert_eq!(curve.points[0].accuracies[0], acc);
        assert_eq!(curve.points[0].zeroed, 0);
        assert_eq!(curve.points[1].zeroed, 5);
    }

    #[test]
    fn invalid_fractions_are_rejected() {
        let (x, y) = toy();
        let c = cfg();
        let t = TaskSpec::gender();
        let run = |f: &[f64], r| feature_ablation_curve(x.view(), &y, x.view(), &y, &t, f, r, &c, 0);
        assert!(matches!(run(&[0.5, 0.2], 1), Err(Error::Config(_))));
        assert!(matches!(run(&[1.0], 1), Err(Error::Config(_))));
        assert!(matches!(run(&[0.0], 0), Err(Error::Config(_))));
        assert!(matches!(run(&[0.95], 1), Err(Error::Data(_))));
    }
}
