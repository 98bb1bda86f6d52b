use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative evaluated from the pre-activation `z` and its image `a`.
    /// ReLU uses 0 at the kink.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine map followed by an elementwise activation.
///
/// `weights` has one row per output unit and one column per input, so
/// column `j` of the first layer holds every weight fed by input `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Self {
        Layer {
            weights,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// A dense feed-forward network whose last layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

/// Cached intermediate values of a forward pass, consumed by
/// [`DenseNetwork::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub pre_activations: Vec<Array2<f64>>,
    pub activations: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace has at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients for every parameter of a network plus the gradient with
/// respect to the network input (used to chain a party network behind the
/// server network).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
    pub input: Array2<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNetwork, batch_rows: usize) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            input: Array2::zeros((batch_rows, net.input_dim())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().all(|v| v.is_finite())
            && self.layers.iter().all(|g| {
                g.weights.iter().all(|v| v.is_finite()) && g.bias.iter().all(|v| v.is_finite())
            })
    }

    /// Whether every per-layer shape equals the matching layer of `net`.
    pub fn mirrors(&self, net: &DenseNetwork) -> bool {
        self.layers.len() == net.layers.len()
            && self.input.ncols() == net.input_dim()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len())
    }

    /// Iterates every parameter gradient in layer order: weights row-major,
    /// then bias. Input gradients are not included.
    pub fn parameter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
    }

    /// Zeroes the first-layer weight gradient of every input whose flag in
    /// `alive` is false.
    pub fn zero_dead_inputs(&mut self, alive: &[bool]) {
        if let Some(first) = self.layers.first_mut() {
            for (j, &keep) in alive.iter().enumerate() {
                if !keep {
                    first.weights.column_mut(j).fill(0.0);
                }
            }
        }
    }
}

impl DenseNetwork {
    /// Builds a network from explicit layers, validating every structural
    /// invariant.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape(
                    format!("layer {i} bias"),
                    layer.outputs(),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layer.inputs() != layers[i - 1].outputs() {
                return Err(Error::shape(
                    format!("layer {i} inputs"),
                    layers[i - 1].outputs(),
                    layer.inputs(),
                ));
            }
            if layer.outputs() == 0 || layer.inputs() == 0 {
                return Err(Error::Domain(format!("layer {i} has a zero dimension")));
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Domain("final layer must be affine (Identity)".into()));
        }
        Ok(DenseNetwork { layers })
    }

    /// Glorot-uniform weights, zero biases. `hidden` lists the widths of
    /// the hidden layers, all using `activation`; the output layer is affine.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-a..=a));
                let act = if i == last {
                    Activation::Identity
                } else {
                    activation
                };
                Layer::new(weights, Array1::zeros(fan_out), act)
            })
            .collect();
        DenseNetwork::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn first_layer(&self) -> &Layer {
        &self.layers[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Replaces the first-layer weight matrix with one of identical shape.
    pub fn set_first_layer_weights(&mut self, weights: Array2<f64>) -> Result<()> {
        let current = &mut self.layers[0].weights;
        if current.dim() != weights.dim() {
            return Err(Error::shape(
                "first layer weights",
                format!("{:?}", current.dim()),
                format!("{:?}", weights.dim()),
            ));
        }
        *current = weights;
        Ok(())
    }

    /// Drops output units of the final layer, keeping `keep` in order.
    pub(crate) fn retain_outputs(&mut self, keep: &[usize]) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights = last.weights.select(Axis(0), keep);
        last.bias = last.bias.select(Axis(0), keep);
    }

    /// Drops input columns of the first layer, keeping `keep` in order.
    pub(crate) fn retain_inputs(&mut self, keep: &[usize]) {
        let first = &mut self.layers[0];
        first.weights = first.weights.select(Axis(1), keep);
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::shape(
                "layer 0 input columns",
                self.input_dim(),
                batch.ncols(),
            ));
        }
        if !batch.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("forward input batch".into()));
        }
        Ok(())
    }

    /// Output only; skips building a trace.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        let mut act = batch.to_owned();
        for layer in &self.layers {
            let mut z = affine(act.view(), layer);
            z.mapv_inplace(|v| layer.activation.apply(v));
            act = z;
        }
        Ok(act)
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardTrace)> {
        self.check_batch(&batch)?;
        let input = batch.to_owned();
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = activations.last().unwrap_or(&input);
            let z = affine(prev.view(), layer);
            let a = z.mapv(|v| layer.activation.apply(v));
            pre_activations.push(z);
            activations.push(a);
        }
        let outputs = activations.last().expect("non-empty").clone();
        Ok((
            outputs,
            ForwardTrace {
                input,
                pre_activations,
                activations,
            },
        ))
    }

    /// Exact gradients of `sum(outputs * output_grad)` with respect to every
    /// parameter and to the input batch.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: ArrayView2<f64>) -> Result<GradientSet> {
        self.check_trace(trace)?;
        let out = trace.output();
        if output_grad.dim() != out.dim() {
            return Err(Error::shape(
                "output gradient",
                format!("{:?}", out.dim()),
                format!("{:?}", output_grad.dim()),
            ));
        }
        if !output_grad.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("output gradient".into()));
        }

        let n_layers = self.layers.len();
        let mut grads: Vec<Option<LayerGrad>> = vec![None; n_layers];
        let last = &self.layers[n_layers - 1];
        let mut delta = local_derivative(
            last.activation,
            &trace.pre_activations[n_layers - 1],
            &trace.activations[n_layers - 1],
        ) * output_grad;

        let mut input_grad = None;
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let prev = if l == 0 {
                &trace.input
            } else {
                &trace.activations[l - 1]
            };
            grads[l] = Some(LayerGrad {
                weights: delta.t().dot(prev),
                bias: delta.sum_axis(Axis(0)),
            });
            let upstream = delta.dot(&layer.weights);
            if l == 0 {
                input_grad = Some(upstream);
            } else {
                let below = &self.layers[l - 1];
                delta = local_derivative(
                    below.activation,
                    &trace.pre_activations[l - 1],
                    &trace.activations[l - 1],
                ) * &upstream;
            }
        }

        Ok(GradientSet {
            layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
            input: input_grad.expect("filled"),
        })
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.pre_activations.len() != self.layers.len()
            || trace.activations.len() != self.layers.len()
        {
            return Err(Error::Consistency(format!(
                "trace has {} layers, network has {}",
                trace.activations.len(),
                self.layers.len()
            )));
        }
        if trace.input.ncols() != self.input_dim() {
            return Err(Error::Consistency("trace input width".into()));
        }
        let rows = trace.batch_size();
        for (i, (layer, (z, a))) in self
            .layers
            .iter()
            .zip(trace.pre_activations.iter().zip(&trace.activations))
            .enumerate()
        {
            if z.dim() != (rows, layer.outputs()) || a.dim() != z.dim() {
                return Err(Error::Consistency(format!("layer {i} cache shape")));
            }
        }
        Ok(())
    }
}

/// `input · Wᵀ + b`, computed one sample at a time so each output row
/// depends only on its own input row (bitwise independent of the batch it
/// is evaluated in).
fn affine(input: ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut z = Array2::zeros((input.nrows(), layer.outputs()));
    for (x, mut out) in input.outer_iter().zip(z.outer_iter_mut()) {
        for ((o, w), &b) in out.iter_mut().zip(layer.weights.outer_iter()).zip(&layer.bias) {
            *o = x.dot(&w) + b;
        }
    }
    z
}

fn local_derivative(act: Activation, z: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    let mut d = z.clone();
    d.zip_mut_with(a, |zv, &av| *zv = act.derivative(*zv, av));
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn linear(w: Array2<f64>, b: Array1<f64>) -> DenseNetwork {
        DenseNetwork::new(vec![Layer::new(w, b, Activation::Identity)]).unwrap()
    }

    #[test]
    fn affine_identity_layer() {
        let net = linear(array![[2.0]], array![1.0]);
        let (out, _) = net.forward(array![[3.0]].view()).unwrap();
        assert_eq!(out, array![[7.0]]);
    }

    #[test]
    fn empty_batch_keeps_width() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let net = DenseNetwork::init(4, &[5], 3, Activation::Tanh, &mut rng).unwrap();
        let (out, trace) = net.forward(Array2::zeros((0, 4)).view()).unwrap();
        assert_eq!(out.dim(), (0, 3));
        let g = net.backward(&trace, Array2::zeros((0, 3)).view()).unwrap();
        assert!(g.mirrors(&net));
        assert!(g.parameter_values().all(|v| v == 0.0));
    }

    #[test]
    fn two_layer_tanh_by_hand() {
        let w1 = array![[0.3, -0.2], [0.1, 0.4]];
        let b1 = array![0.05, -0.1];
        let w2 = array![[0.7, -0.5]];
        let b2 = array![0.2];
        let net = DenseNetwork::new(vec![
            Layer::new(w1, b1, Activation::Tanh),
            Layer::new(w2, b2, Activation::Identity),
        ])
        .unwrap();
        let (out, _) = net.forward(array![[0.5, -0.5]].view()).unwrap();
        let h0 = (0.3 * 0.5 + -0.2 * -0.5 + 0.05f64).tanh();
        let h1 = (0.1 * 0.5 + 0.4 * -0.5 - 0.1f64).tanh();
        let expected = 0.7 * h0 - 0.5 * h1 + 0.2;
        assert_eq!(out[[0, 0]], expected);
    }

    #[test]
    fn linear_backward_with_unit_output_grad() {
        let net = linear(array![[2.0]], array![1.0]);
        let (_, trace) = net.forward(array![[3.0]].view()).unwrap();
        let g = net.backward(&trace, array![[1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weights, array![[3.0]]);
        assert_eq!(g.layers[0].bias, array![1.0]);
        assert_eq!(g.input, array![[2.0]]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let net = DenseNetwork::init(3, &[4, 4], 2, Activation::Tanh, &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (_, trace) = net.forward(x.view()).unwrap();
        let g = net.backward(&trace, Array2::zeros((6, 2)).view()).unwrap();
        assert!(g.parameter_values().all(|v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let net = linear(array![[1.0, 2.0]], array![0.0]);
        let err = net.forward(array![[1.0]].view()).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = linear(array![[1.0]], array![0.0]);
        assert!(matches!(
            net.forward(array![[f64::NAN]].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn mismatched_trace_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = DenseNetwork::init(3, &[4], 2, Activation::Tanh, &mut rng).unwrap();
        let b = DenseNetwork::init(3, &[5, 2], 2, Activation::Tanh, &mut rng).unwrap();
        let (_, trace) = a.forward(Array2::zeros((2, 3)).view()).unwrap();
        assert!(matches!(
            b.backward(&trace, Array2::zeros((2, 2)).view()),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn final_layer_must_be_affine() {
        let err = DenseNetwork::new(vec![Layer::new(array![[1.0]], array![0.0], Activation::Tanh)]);
        assert!(err.is_err());
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let net = DenseNetwork::init(10, &[6], 4, Activation::Relu, &mut rng).unwrap();
        let a = (6.0f64 / 16.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= a));
        assert_eq!(net.layers()[0].activation, Activation::Relu);
        assert_eq!(net.layers()[1].activation, Activation::Identity);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let net = DenseNetwork::init(4, &[8, 8], 3, Activation::Tanh, &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 4), |(i, j)| ((i * 4 + j) as f64).sin());
        let (a, trace) = net.forward(x.view()).unwrap();
        let b = net.predict(x.view()).unwrap();
        assert_eq!(a, b);
        assert_eq!(trace.output(), &a);
    }

}
