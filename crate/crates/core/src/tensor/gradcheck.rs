//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::net::{DenseNet, Gradients};

/// Networks above this many parameters are checked on a seeded subsample.
pub const FULL_CHECK_LIMIT: usize = 10_000;
const SUBSAMPLE: usize = 1_000;
const DENOM_FLOOR: f64 = 1e-6;

/// Compares the analytic gradients returned by `loss` against central
/// differences of its value and returns the maximum relative error
/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn finite_difference_check<F>(net: &DenseNet, loss: F, eps: f64) -> Result<f64>
where
    F: Fn(&DenseNet) -> Result<(f64, Gradients)>,
{
    finite_difference_check_seeded(net, loss, eps, 0)
}

pub fn finite_difference_check_seeded<F>(net: &DenseNet, loss: F, eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&DenseNet) -> Result<(f64, Gradients)>,
{
    let (base, analytic) = loss(net)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {base}")));
    }
    if !analytic.matches(net) {
        return Err(Error::Shape("loss procedure returned mismatched gradients".into()));
    }
    let flat_grad: Vec<f64> = analytic.flat().flat_map(|s| s.iter().copied()).collect();
    let total = flat_grad.len();
    let indices: Vec<usize> = if total > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, total, SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for idx in indices {
        let original = get_param(&probe, idx);
        set_param(&mut probe, idx, original + eps);
        let up = loss(&probe)?.0;
        set_param(&mut probe, idx, original - eps);
        let down = loss(&probe)?.0;
        set_param(&mut probe, idx, original);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("loss not finite at parameter {idx}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = flat_grad[idx];
        let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

fn locate(net: &DenseNet, mut idx: usize) -> (usize, usize) {
    for (slot, s) in net.params().enumerate() {
        if idx < s.len() {
            return (slot, idx);
        }
        idx -= s.len();
    }
    panic!("parameter index out of range");
}

fn get_param(net: &DenseNet, idx: usize) -> f64 {
    let (slot, off) = locate(net, idx);
    net.params().nth(slot).expect("slot exists")[off]
}

fn set_param(net: &mut DenseNet, idx: usize, value: f64) {
    let (slot, off) = locate(net, idx);
    net.params_mut().nth(slot).expect("slot exists")[off] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::loss::cross_entropy_batch;
    use crate::tensor::net::Activation;
    use ndarray::Array2;

    fn batch() -> Array2<f64> {
        Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0)
    }

    #[test]
    fn quadratic_loss_on_linear_layer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::random("lin", &[4, 3], &[Activation::Linear], &mut rng).unwrap();
        let x = batch();
        let loss = |n: &DenseNet| {
            let fwd = n.forward(x.view())?;
            let out = fwd.output();
            let value = 0.5 * out.iter().map(|v| v * v).sum::<f64>();
            let back = n.backward(&fwd, out.view())?;
            Ok((value, back.grads))
        };
        let err = finite_difference_check(&net, loss, 1e-5).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn relu_softmax_net_passes_and_corruption_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::random(
            "mlp",
            &[4, 6, 5, 3],
            &[Activation::Relu, Activation::Sigmoid, Activation::Softmax],
            &mut rng,
        )
        .unwrap();
        let x = batch();
        let labels = [0, 2, 1, 1, 0];
        let loss = |n: &DenseNet| {
            let fwd = n.forward(x.view())?;
            let logits = fwd.output().mapv(f64::ln);
            let (value, g) = cross_entropy_batch(logits.view(), &labels)?;
            let back = n.backward_logits(&fwd, g.view())?;
            Ok((value, back.grads))
        };
        let err = finite_difference_check(&net, loss, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");

        let corrupted = |n: &DenseNet| {
            let (v, mut g) = loss(n)?;
            g.layers[1].weight[[2, 3]] *= 2.0;
            Ok((v, g))
        };
        let err = finite_difference_check(&net, corrupted, 1e-5).unwrap();
        assert!(err > 0.1, "corruption not detected: {err}");
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::random("lin", &[2, 2], &[Activation::Linear], &mut rng).unwrap();
        let res = finite_difference_check(&net, |n| Ok((f64::NAN, Gradients::zeros_like(n))), 1e-5);
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
