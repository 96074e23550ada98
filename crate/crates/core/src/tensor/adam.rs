use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::net::{DenseNet, Gradients, LayerGrad};

/// Optimizer and batching settings shared by every training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epsilon: f64,
    /// L2 penalty added to weight (not bias) gradients.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 128,
            epsilon: 1e-8,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1", "must lie in (0, 1)");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2", "must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be ≥ 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be > 0");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be ≥ 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<LayerGrad>,
    pub second: Vec<LayerGrad>,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.first.len() == net.layers().len()
            && self.second.len() == net.layers().len()
            && net.layers().iter().zip(&self.first).all(|(l, m)| {
                l.weight.dim() == m.weight.dim() && l.bias.len() == m.bias.len()
            })
    }
}

/// One bias-corrected Adam step, applied in place. Nothing is modified when
/// the gradients contain non-finite values or shapes disagree.
pub fn adam_update(
    net: &mut DenseNet,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if !grads.matches(net) || !state.matches(net) {
        return Err(Error::Shape(format!(
            "gradient/optimizer state shapes do not match network '{}'",
            net.name
        )));
    }
    if !grads.all_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient for network '{}', update aborted",
            net.name
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for ((layer, g), (m, v)) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        step_tensor(
            &mut layer.weight,
            &g.weight,
            &mut m.weight,
            &mut v.weight,
            config,
            c1,
            c2,
            config.weight_decay,
        );
        step_vector(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, config, c1, c2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_tensor(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    cfg: &TrainConfig,
    c1: f64,
    c2: f64,
    decay: f64,
) {
    let p = p.as_slice_mut().expect("standard layout");
    let g = g.as_slice().expect("standard layout");
    let m = m.as_slice_mut().expect("standard layout");
    let v = v.as_slice_mut().expect("standard layout");
    step_slices(p, g, m, v, cfg, c1, c2, decay);
}

fn step_vector(
    p: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    cfg: &TrainConfig,
    c1: f64,
    c2: f64,
) {
    let p = p.as_slice_mut().expect("standard layout");
    let g = g.as_slice().expect("standard layout");
    let m = m.as_slice_mut().expect("standard layout");
    let v = v.as_slice_mut().expect("standard layout");
    step_slices(p, g, m, v, cfg, c1, c2, 0.0);
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_slices(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &TrainConfig,
    c1: f64,
    c2: f64,
    decay: f64,
) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for i in 0..p.len() {
        let gi = g[i] + decay * p[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::net::{Activation, DenseLayer};
    use ndarray::array;

    fn scalar_net(value: f64) -> DenseNet {
        DenseNet::new(
            "s",
            vec![DenseLayer {
                weight: array![[value]],
                bias: array![0.0],
                activation: Activation::Linear,
            }],
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![LayerGrad {
                weight: array![[g]],
                bias: array![0.0],
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar_net(0.7);
        let mut state = AdamState::new(&net);
        adam_update(&mut net, &scalar_grad(0.0), &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(net.layers()[0].weight[[0, 0]], 0.7);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut state = AdamState::new(&net);
        adam_update(&mut net, &scalar_grad(0.5), &mut state, &TrainConfig::default()).unwrap();
        assert!((net.layers()[0].weight[[0, 0]] + 0.001).abs() < 1e-6);
    }

    #[test]
    fn two_steps_differ_from_one_doubled_step() {
        let cfg = TrainConfig::default();
        let mut a = scalar_net(0.0);
        let mut sa = AdamState::new(&a);
        adam_update(&mut a, &scalar_grad(0.5), &mut sa, &cfg).unwrap();
        adam_update(&mut a, &scalar_grad(0.5), &mut sa, &cfg).unwrap();

        let doubled = TrainConfig {
            learning_rate: 2.0 * cfg.learning_rate,
            ..cfg
        };
        let mut b = scalar_net(0.0);
        let mut sb = AdamState::new(&b);
        adam_update(&mut b, &scalar_grad(0.5), &mut sb, &doubled).unwrap();
        assert_ne!(a.layers()[0].weight[[0, 0]], b.layers()[0].weight[[0, 0]]);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut net = scalar_net(0.3);
        let mut state = AdamState::new(&net);
        let err = adam_update(&mut net, &scalar_grad(f64::NAN), &mut state, &TrainConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(net.layers()[0].weight[[0, 0]], 0.3);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
