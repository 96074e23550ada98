//! Mini-batch training of classifier heads.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::adam::{adam_update, AdamState, TrainConfig};
use crate::tensor::gather_rows;
use crate::tensor::loss::ovr_hinge_batch;
use crate::tensor::net::{Activation, DenseNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadLoss {
    /// Softmax output layer.
    CrossEntropy,
    /// Linear output layer, one score per class.
    OvrHinge,
    /// Single sigmoid output unit.
    Binary,
}

impl HeadLoss {
    fn expected_activation(self) -> Activation {
        match self {
            HeadLoss::CrossEntropy => Activation::Softmax,
            HeadLoss::OvrHinge => Activation::Linear,
            HeadLoss::Binary => Activation::Sigmoid,
        }
    }
}

/// Mean loss over the batch and its gradient w.r.t. the final pre-activation.
pub fn head_loss_grad(loss: HeadLoss, output: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let b = labels.len().max(1) as f64;
    match loss {
        HeadLoss::CrossEntropy => {
            let mut grad = output.clone();
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                if y >= output.ncols() {
                    return Err(Error::Argument(format!("label {y} out of range")));
                }
                total -= output[[i, y]].max(f64::MIN_POSITIVE).ln();
                grad[[i, y]] -= 1.0;
            }
            grad /= b;
            Ok((total / b, grad))
        }
        HeadLoss::OvrHinge => ovr_hinge_batch(output.view(), labels),
        HeadLoss::Binary => {
            let mut grad = output.clone();
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let p = output[[i, 0]];
                let t = if y == 1 { 1.0 } else { 0.0 };
                total -= t * p.max(f64::MIN_POSITIVE).ln() + (1.0 - t) * (1.0 - p).max(f64::MIN_POSITIVE).ln();
                grad[[i, 0]] = p - t;
            }
            grad /= b;
            Ok((total / b, grad))
        }
    }
}

/// Trains `net` in place; returns the mean loss of every epoch.
pub fn fit_classifier(
    net: &mut DenseNet,
    x: ArrayView2<f64>,
    labels: &[usize],
    loss: HeadLoss,
    epochs: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if x.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", x.nrows(), labels.len())));
    }
    let last = net.layers().last().expect("non-empty network").activation;
    if last != loss.expected_activation() {
        return Err(Error::Shape(format!(
            "{loss:?} needs a {:?} output layer, network '{}' ends in {last:?}",
            loss.expected_activation(),
            net.name
        )));
    }
    let mut state = AdamState::new(net);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(x, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let fwd = net.forward(xb.view())?;
            let (l, g) = head_loss_grad(loss, fwd.output(), &yb)?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss while training '{}'", net.name)));
            }
            total += l * chunk.len() as f64;
            let back = net.backward_logits(&fwd, g.view())?;
            adam_update(net, &back.grads, &mut state, cfg)?;
        }
        history.push(total / labels.len().max(1) as f64);
    }
    Ok(history)
}

/// Arg-max class per row (threshold 0.5 for a single sigmoid unit).
pub fn predict_labels(output: &Array2<f64>) -> Vec<usize> {
    if output.ncols() == 1 {
        return output.column(0).iter().map(|&p| usize::from(p >= 0.5)).collect();
    }
    output
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}
