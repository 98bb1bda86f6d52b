use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::network::{DenseNetwork, GradientSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..Self::sgd(learning_rate)
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                format!("{field}.learning_rate"),
                "must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config(field, "betas must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config(format!("{field}.epsilon"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Update rule plus its per-parameter accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step_count: u64,
    first: Vec<Moments>,
    second: Vec<Moments>,
}

fn zeros_for(net: &DenseNetwork) -> Vec<Moments> {
    net.layers()
        .iter()
        .map(|l| Moments {
            weights: Array2::zeros(l.weights.raw_dim()),
            bias: Array1::zeros(l.bias.len()),
        })
        .collect()
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, net: &DenseNetwork) -> Self {
        let (first, second) = match config.kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (zeros_for(net), zeros_for(net)),
        };
        OptimizerState {
            config,
            step_count: 0,
            first,
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update in place. Rejects non-finite or mis-shaped
    /// gradients without touching the network.
    pub fn step(&mut self, net: &mut DenseNetwork, grads: &GradientSet) -> Result<()> {
        if !grads.mirrors(net) {
            return Err(Error::Consistency(
                "gradient shapes do not mirror the network".into(),
            ));
        }
        if self.config.kind == OptimizerKind::Adam && self.first.len() != net.layers().len() {
            return Err(Error::Consistency(
                "optimizer accumulators do not mirror the network".into(),
            ));
        }
        if !grads.parameter_values().all(f64::is_finite) {
            return Err(Error::NonFinite("gradient passed to optimizer".into()));
        }
        self.step_count += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    layer.weights.scaled_add(-lr, &g.weights);
                    layer.bias.scaled_add(-lr, &g.bias);
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig {
                    beta1, beta2, epsilon, ..
                } = self.config;
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
                };
                for (((layer, g), m), v) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    Zip::from(&mut layer.weights)
                        .and(&g.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .for_each(update);
                    Zip::from(&mut layer.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(update);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use ndarray::array;

    fn scalar_net(w: f64) -> DenseNetwork {
        DenseNetwork::new(vec![Layer::new(array![[w]], array![0.0], Activation::Identity)]).unwrap()
    }

    fn scalar_grad(g: f64) -> GradientSet {
        GradientSet {
            layers: vec![crate::nn::LayerGrad {
                weights: array![[g]],
                bias: array![0.0],
            }],
            input: Array2::zeros((0, 1)),
        }
    }

    #[test]
    fn sgd_step() {
        let mut net = scalar_net(1.0);
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.1), &net);
        opt.step(&mut net, &scalar_grad(2.0)).unwrap();
        assert!((net.layers()[0].weights[[0, 0]] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // Step 1: m̂ = g, v̂ = g², so the move is lr·g/(|g| + ε).
        for g in [1e-3, 0.5, 40.0, -7.0] {
            let mut net = scalar_net(0.0);
            let mut opt = OptimizerState::new(OptimizerConfig::adam(0.01), &net);
            opt.step(&mut net, &scalar_grad(g)).unwrap();
            let moved = net.layers()[0].weights[[0, 0]];
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((moved - expected).abs() < 1e-15, "g={g}: {moved} vs {expected}");
            assert!((moved.abs() - 0.01).abs() < 1e-7);
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut net = scalar_net(0.3);
            let mut opt = OptimizerState::new(
                OptimizerConfig {
                    kind,
                    ..OptimizerConfig::sgd(0.1)
                },
                &net,
            );
            opt.step(&mut net, &scalar_grad(0.0)).unwrap();
            assert_eq!(net.layers()[0].weights[[0, 0]], 0.3);
            assert_eq!(opt.step_count(), 1);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = scalar_net(0.3);
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.1), &net);
        assert!(opt.step(&mut net, &scalar_grad(f64::INFINITY)).is_err());
        assert_eq!(net.layers()[0].weights[[0, 0]], 0.3);
        assert_eq!(opt.step_count(), 0);
    }
}
