//! Losses and gradient-only operators.

use ndarray::{Array, Array2, ArrayBase, ArrayView1, ArrayView2, Data, Dimension};

use crate::error::{Error, Result};
use crate::tensor::net::sigmoid;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[label]` and its gradient `softmax − one_hot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::Argument(format!(
            "cross-entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&v| (v - log_sum).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over a batch of logit rows; the returned gradient is
/// already divided by the batch size.
pub fn cross_entropy_batch(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let b = labels.len().max(1) as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((row, &label), mut g_row) in logits.rows().into_iter().zip(labels).zip(grad.rows_mut()) {
        let row = row.to_vec();
        let (loss, g) = cross_entropy(&row, label)?;
        total += loss;
        for (dst, v) in g_row.iter_mut().zip(g) {
            *dst = v / b;
        }
    }
    Ok((total / b, grad))
}

/// Mean binary cross-entropy on raw logits (single output column).
pub fn binary_cross_entropy_batch(logits: ArrayView2<f64>, labels: &[bool]) -> Result<(f64, Array2<f64>)> {
    if logits.ncols() != 1 || logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "binary cross-entropy expects {}×1 logits, got {:?}",
            labels.len(),
            logits.dim()
        )));
    }
    let b = labels.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let z = logits[[i, 0]];
        let t = if y { 1.0 } else { 0.0 };
        // log(1 + e^z) − t·z, written to avoid overflow
        total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad[[i, 0]] = (sigmoid(z) - t) / b;
    }
    Ok((total / b, grad))
}

/// One-vs-rest squared-free hinge: Σ_c max(0, 1 − y_c·s_c) with y_c = ±1,
/// averaged over the batch.
pub fn ovr_hinge_batch(scores: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if scores.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} score rows for {} labels",
            scores.nrows(),
            labels.len()
        )));
    }
    let b = labels.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(scores.raw_dim());
    for (i, &label) in labels.iter().enumerate() {
        if label >= scores.ncols() {
            return Err(Error::Argument(format!("label {label} out of range")));
        }
        for c in 0..scores.ncols() {
            let y = if c == label { 1.0 } else { -1.0 };
            let margin = 1.0 - y * scores[[i, c]];
            if margin > 0.0 {
                total += margin;
                grad[[i, c]] = -y / b;
            }
        }
    }
    Ok((total / b, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(0, ‖a−p‖² − ‖a−n‖² + margin)`; gradients are zero whenever the hinge
/// is not strictly active.
pub fn triplet_loss(
    anchor: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negative: ArrayView1<f64>,
    margin: f64,
) -> Result<TripletLoss> {
    let d = anchor.len();
    if positive.len() != d || negative.len() != d {
        return Err(Error::Shape(format!(
            "triplet dimensions differ: {} / {} / {}",
            d,
            positive.len(),
            negative.len()
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::Argument(format!("triplet margin must be ≥ 0, got {margin}")));
    }
    let mut d_pos = 0.0;
    let mut d_neg = 0.0;
    for i in 0..d {
        d_pos += (anchor[i] - positive[i]).powi(2);
        d_neg += (anchor[i] - negative[i]).powi(2);
    }
    let raw = d_pos - d_neg + margin;
    if raw > 0.0 {
        let grad_anchor = (0..d).map(|i| 2.0 * (negative[i] - positive[i])).collect();
        let grad_positive = (0..d).map(|i| -2.0 * (anchor[i] - positive[i])).collect();
        let grad_negative = (0..d).map(|i| 2.0 * (anchor[i] - negative[i])).collect();
        Ok(TripletLoss {
            loss: raw,
            grad_anchor,
            grad_positive,
            grad_negative,
        })
    } else {
        Ok(TripletLoss {
            loss: 0.0,
            grad_anchor: vec![0.0; d],
            grad_positive: vec![0.0; d],
            grad_negative: vec![0.0; d],
        })
    }
}

/// Backward rule of the gradient reversal layer (identity in the forward
/// direction): returns `−scale · upstream`.
pub fn gradient_reversal<S, D>(upstream: &ArrayBase<S, D>, scale: f64) -> Array<f64, D>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    upstream.mapv(|g| -scale * g)
}

/// Shannon entropy (nats) of a probability row.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Gradient of the negative entropy `Σ p log p` w.r.t. the logits that
/// produced `probs`: `p_j (log p_j + H)`.
pub fn neg_entropy_logit_grad(probs: &[f64]) -> Vec<f64> {
    let h = entropy(probs);
    probs
        .iter()
        .map(|&p| if p > 0.0 { p * (p.ln() + h) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn cross_entropy_uniform_is_log_c() {
        let (loss, grad) = cross_entropy(&[0.0; 6], 2).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.7918).abs() < 1e-4);
        assert!((grad[2] - (1.0 / 6.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_peaked_goes_to_zero() {
        let (loss, _) = cross_entropy(&[60.0, 0.0, 0.0], 0).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn cross_entropy_two_logit_value() {
        let (loss, _) = cross_entropy(&[1.0, 0.0], 0).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-14);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        assert!(matches!(cross_entropy(&[0.0, 1.0], 2), Err(Error::Argument(_))));
        assert!(matches!(cross_entropy(&[0.0], 0), Err(Error::Argument(_))));
    }

    #[test]
    fn triplet_examples() {
        let z = Array1::zeros(2);
        let t = triplet_loss(z.view(), z.view(), z.view(), 0.2).unwrap();
        assert!((t.loss - 0.2).abs() < 1e-15);

        let n = array![1.0, 0.0];
        let t = triplet_loss(z.view(), z.view(), n.view(), 0.2).unwrap();
        assert_eq!(t.loss, 0.0);
        assert!(t.grad_anchor.iter().chain(&t.grad_negative).all(|&g| g == 0.0));

        let p = array![1.0, 0.0];
        let t = triplet_loss(z.view(), p.view(), p.view(), 0.2).unwrap();
        assert!((t.loss - 0.2).abs() < 1e-15);
    }

    #[test]
    fn triplet_dimension_mismatch() {
        let a = array![0.0, 0.0];
        let b = array![0.0, 0.0, 1.0];
        assert!(matches!(
            triplet_loss(a.view(), a.view(), b.view(), 0.2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn reversal_examples() {
        let g = array![2.0, -4.0];
        assert_eq!(gradient_reversal(&g, 1.0), array![-2.0, 4.0]);
        assert!(gradient_reversal(&g, 0.0).iter().all(|&v| v == 0.0));
        assert_eq!(gradient_reversal(&g, 0.5), array![-1.0, 2.0]);
    }

    #[test]
    fn neg_entropy_grad_matches_finite_difference() {
        let logits = [0.3, -1.2, 0.8, 0.05];
        let analytic = neg_entropy_logit_grad(&softmax(&logits));
        let eps = 1e-6;
        for j in 0..logits.len() {
            let mut up = logits;
            let mut down = logits;
            up[j] += eps;
            down[j] -= eps;
            let num = (-entropy(&softmax(&up)) + entropy(&softmax(&down))) / (2.0 * eps);
            assert!((num - analytic[j]).abs() < 1e-8, "{j}: {num} vs {}", analytic[j]);
        }
    }

    #[test]
    fn hinge_and_bce_batches() {
        let (loss, grad) = ovr_hinge_batch(array![[2.0, -2.0]].view(), &[0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
        let (loss, grad) = binary_cross_entropy_batch(array![[0.0]].view(), &[true]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((grad[[0, 0]] + 0.5).abs() < 1e-15);
    }
}
