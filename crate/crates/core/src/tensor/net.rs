//! Dense feed-forward networks with explicit forward/backward passes.
//!
//! Weights are stored `out × in`; batches are `B × in` row-major, so a layer
//! computes `Z = X·Wᵀ + b` followed by its activation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn code(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "linear" => Some(Activation::Linear),
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
            }
        }
    }

    /// Maps a gradient w.r.t. the activation output onto the pre-activation,
    /// given the activation output `y`.
    fn backprop(self, y: &Array2<f64>, grad: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Activation::Linear => grad.to_owned(),
            Activation::Relu => {
                let mut g = grad.to_owned();
                g.zip_mut_with(y, |g, &y| {
                    if y <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
            Activation::Sigmoid => {
                let mut g = grad.to_owned();
                g.zip_mut_with(y, |g, &y| *g *= y * (1.0 - y));
                g
            }
            Activation::Softmax => {
                let mut g = grad.to_owned();
                for (mut g_row, y_row) in g.rows_mut().into_iter().zip(y.rows()) {
                    let dot = g_row.dot(&y_row);
                    g_row.zip_mut_with(&y_row, |g, &p| *g = p * (*g - dot));
                }
                g
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub name: String,
    layers: Vec<DenseLayer>,
}

/// Activations recorded by [`DenseNet::forward`]: the input to each layer and
/// each layer's post-activation output.
#[derive(Debug, Clone)]
pub struct Forward {
    pub inputs: Vec<Array2<f64>>,
    pub outputs: Vec<Array2<f64>>,
}

impl Forward {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("forward pass over an empty network")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Gradients,
    /// Gradient w.r.t. the network input batch.
    pub input_grad: Array2<f64>,
}

impl DenseNet {
    pub fn new(name: impl Into<String>, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} does not match output dimension {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if layer.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::Shape(format!(
                    "layer {i}: softmax is only allowed as the final activation"
                )));
            }
            if i > 0 && layers[i - 1].out_dim() != layer.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: input dimension {} does not match previous output {}",
                    layer.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
        }
        Ok(DenseNet {
            name: name.into(),
            layers,
        })
    }

    /// Glorot-uniform weights in ±√(6/(in+out)) and zero biases.
    /// `dims` has one more entry than `activations`.
    pub fn random<R: Rng + ?Sized>(
        name: impl Into<String>,
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() != activations.len() + 1 || activations.is_empty() {
            return Err(Error::Shape(format!(
                "{} dims cannot describe {} layers",
                dims.len(),
                activations.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                DenseLayer {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        DenseNet::new(name, layers)
    }

    /// Single layer with all-zero weights and biases.
    pub fn zero_layer(name: impl Into<String>, fan_in: usize, fan_out: usize, activation: Activation) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        DenseNet::new(
            name,
            vec![DenseLayer {
                weight: Array2::zeros((fan_out, fan_in)),
                bias: Array1::zeros(fan_out),
                activation,
            }],
        )
    }

    /// `depth` square linear layers, each the identity plus Gaussian noise of
    /// standard deviation `noise`.
    pub fn near_identity<R: Rng + ?Sized>(
        name: impl Into<String>,
        dim: usize,
        depth: usize,
        noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 || dim == 0 {
            return Err(Error::Shape("near-identity network needs depth ≥ 1 and dim ≥ 1".into()));
        }
        let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Argument(e.to_string()))?;
        let layers = (0..depth)
            .map(|_| {
                let mut weight = Array2::eye(dim);
                if noise > 0.0 {
                    weight.mapv_inplace(|v| v + normal.sample(rng));
                }
                DenseLayer {
                    weight,
                    bias: Array1::zeros(dim),
                    activation: Activation::Linear,
                }
            })
            .collect();
        DenseNet::new(name, layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat parameter views, layer by layer: weights (row-major) then bias.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network '{}' layer 0 expects {} inputs, batch has {} columns",
                self.name,
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Forward> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = match outputs.last() {
                Some(prev) => prev.clone(),
                None => x.to_owned(),
            };
            let out = layer_forward(layer, input.view());
            inputs.push(input);
            outputs.push(out);
        }
        Ok(Forward { inputs, outputs })
    }

    /// Forward pass that keeps only the final output.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut cur = layer_forward(&self.layers[0], x);
        for layer in &self.layers[1..] {
            cur = layer_forward(layer, cur.view());
        }
        Ok(cur)
    }

    /// Backpropagates a gradient taken w.r.t. the final (post-activation)
    /// output. Parameters are not touched.
    pub fn backward(&self, fwd: &Forward, grad_output: ArrayView2<f64>) -> Result<Backward> {
        self.check_forward(fwd, &grad_output)?;
        let last = self.layers.len() - 1;
        let grad_z = self.layers[last]
            .activation
            .backprop(&fwd.outputs[last], grad_output);
        Ok(self.backprop_from(fwd, grad_z))
    }

    /// Backpropagates a gradient taken w.r.t. the final layer's
    /// pre-activation (the logits when the last activation is softmax).
    pub fn backward_logits(&self, fwd: &Forward, grad_logits: ArrayView2<f64>) -> Result<Backward> {
        self.check_forward(fwd, &grad_logits)?;
        Ok(self.backprop_from(fwd, grad_logits.to_owned()))
    }

    fn check_forward(&self, fwd: &Forward, grad: &ArrayView2<f64>) -> Result<()> {
        if fwd.inputs.len() != self.layers.len() || fwd.outputs.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "activations hold {} layers, network '{}' has {}",
                fwd.inputs.len(),
                self.name,
                self.layers.len()
            )));
        }
        for (i, (layer, (input, output))) in self
            .layers
            .iter()
            .zip(fwd.inputs.iter().zip(&fwd.outputs))
            .enumerate()
        {
            if input.ncols() != layer.in_dim() || output.ncols() != layer.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: stale activations ({}→{}) for layer {}→{}",
                    input.ncols(),
                    output.ncols(),
                    layer.in_dim(),
                    layer.out_dim()
                )));
            }
        }
        let out = fwd.output();
        if grad.dim() != out.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad.dim(),
                out.dim()
            )));
        }
        Ok(())
    }

    fn backprop_from(&self, fwd: &Forward, mut grad_z: Array2<f64>) -> Backward {
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut input_grad = Array2::zeros((0, 0));
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let weight = grad_z.t().dot(&fwd.inputs[i]);
            let bias = grad_z.sum_axis(Axis(0));
            let grad_in = grad_z.dot(&layer.weight);
            layer_grads.push(LayerGrad { weight, bias });
            if i == 0 {
                input_grad = grad_in;
            } else {
                grad_z = self.layers[i - 1]
                    .activation
                    .backprop(&fwd.outputs[i - 1], grad_in.view());
            }
        }
        layer_grads.reverse();
        Backward {
            grads: Gradients {
                layers: layer_grads,
            },
            input_grad,
        }
    }
}

fn layer_forward(layer: &DenseLayer, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weight.t());
    z += &layer.bias;
    layer.activation.apply(&mut z);
    z
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers().len()
            && self
                .layers
                .iter()
                .zip(net.layers())
                .all(|(g, l)| g.weight.dim() == l.weight.dim() && g.bias.len() == l.bias.len())
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            g.weight *= s;
            g.bias *= s;
        }
    }

    pub fn flat(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn all_finite(&self) -> bool {
        self.flat().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn l_inf(&self) -> f64 {
        self.flat()
            .flat_map(|s| s.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(dim: usize, activation: Activation) -> DenseLayer {
        DenseLayer {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
            activation,
        }
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let net = DenseNet::new("id", vec![identity_layer(2, Activation::Linear)]).unwrap();
        let out = net.predict(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[1.0, 2.0]]);
    }

    #[test]
    fn zero_logits_softmax_is_uniform() {
        let layer = DenseLayer {
            weight: Array2::zeros((6, 3)),
            bias: Array1::zeros(6),
            activation: Activation::Softmax,
        };
        let net = DenseNet::new("head", vec![layer]).unwrap();
        let out = net.predict(array![[0.3, -1.0, 2.0]].view()).unwrap();
        for &p in out.iter() {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_clips_negative_inputs() {
        let net = DenseNet::new("r", vec![identity_layer(2, Activation::Relu)]).unwrap();
        let out = net.predict(array![[-1.0, 3.0]].view()).unwrap();
        assert_eq!(out, array![[0.0, 3.0]]);
    }

    #[test]
    fn dimension_mismatch_names_the_layer() {
        let net = DenseNet::new("r", vec![identity_layer(2, Activation::Relu)]).unwrap();
        let err = net.predict(array![[1.0, 2.0, 3.0]].view()).unwrap_err();
        assert!(matches!(err, Error::Shape(ref m) if m.contains("layer 0")), "{err}");
    }

    #[test]
    fn invariants_rejected_at_construction() {
        let bad_chain = DenseNet::new(
            "x",
            vec![identity_layer(2, Activation::Relu), identity_layer(3, Activation::Linear)],
        );
        assert!(matches!(bad_chain, Err(Error::Shape(_))));
        let inner_softmax = DenseNet::new(
            "x",
            vec![identity_layer(2, Activation::Softmax), identity_layer(2, Activation::Linear)],
        );
        assert!(matches!(inner_softmax, Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::random(
            "n",
            &[4, 5, 3],
            &[Activation::Relu, Activation::Softmax],
            &mut rng,
        )
        .unwrap();
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i + j) as f64 * 0.3 - 0.5);
        let fwd = net.forward(x.view()).unwrap();
        let back = net.backward(&fwd, Array2::zeros((2, 3)).view()).unwrap();
        assert!(back.grads.l_inf() == 0.0);
        assert!(back.grads.matches(&net));
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::random("n", &[3, 2], &[Activation::Linear], &mut rng).unwrap();
        let before = net.clone();
        let x = array![[1.0, -2.0, 0.5]];
        let g = array![[0.3, -0.7]];
        let fwd = net.forward(x.view()).unwrap();
        let back = net.backward(&fwd, g.view()).unwrap();
        let expected = g.t().dot(&x);
        assert_eq!(back.grads.layers[0].weight, expected);
        assert_eq!(back.grads.layers[0].bias, array![0.3, -0.7]);
        assert_eq!(net, before);
    }

    #[test]
    fn stale_activations_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DenseNet::random("a", &[3, 2], &[Activation::Linear], &mut rng).unwrap();
        let b = DenseNet::random("b", &[4, 2], &[Activation::Linear], &mut rng).unwrap();
        let fwd = a.forward(array![[1.0, 2.0, 3.0]].view()).unwrap();
        let err = b.backward(&fwd, array![[1.0, 1.0]].view()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
