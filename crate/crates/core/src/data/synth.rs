use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNetwork};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Regression,
    /// Binary labels: the sign of the (median-centred) generating output,
    /// each flipped with probability `noise`.
    Classification,
}

/// Ground-truth generating model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub parties: usize,
    pub significant_per_party: usize,
    pub spurious_per_party: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Gaussian label-noise standard deviation (regression) or label-flip
    /// probability (classification).
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub task: Task,
    /// Overrides the seed derived from the experiment's master seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_hidden() -> Vec<usize> {
    vec![8]
}
fn default_embedding_dim() -> usize {
    4
}
fn default_samples() -> usize {
    2000
}
fn default_noise() -> f64 {
    0.1
}

impl SyntheticSpec {
    pub fn regression(parties: usize, significant: usize, spurious: usize) -> Self {
        SyntheticSpec {
            parties,
            significant_per_party: significant,
            spurious_per_party: spurious,
            hidden: default_hidden(),
            embedding_dim: default_embedding_dim(),
            samples: default_samples(),
            noise: default_noise(),
            task: Task::Regression,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("synthetic.{f}");
        if self.parties == 0 {
            return Err(Error::config(field("parties"), "must be at least 1"));
        }
        if self.significant_per_party + self.spurious_per_party == 0 {
            return Err(Error::config(field("significant_per_party"), "parties need features"));
        }
        if self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config(field("hidden"), "layer widths must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::config(field("samples"), "must be positive"));
        }
        let noise_ok = match self.task {
            Task::Regression => self.noise >= 0.0 && self.noise.is_finite(),
            Task::Classification => (0.0..=0.5).contains(&self.noise),
        };
        if !noise_ok {
            return Err(Error::config(field("noise"), "out of range for the task"));
        }
        Ok(())
    }

    pub fn features_per_party(&self) -> usize {
        self.significant_per_party + self.spurious_per_party
    }
}

/// The network that produced a synthetic dataset's labels. Spurious input
/// columns of every party network are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratingModel {
    pub parties: Vec<DenseNetwork>,
    pub server: DenseNetwork,
    pub columns: Vec<Vec<usize>>,
}

impl GeneratingModel {
    /// Noise-free outputs on a full (all-party) feature matrix.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        let embeddings = self
            .parties
            .iter()
            .zip(&self.columns)
            .map(|(net, cols)| net.predict(features.select(Axis(1), cols).view()))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = embeddings.iter().map(|e| e.view()).collect();
        let input = concatenate(Axis(1), &views).map_err(|e| Error::Domain(e.to_string()))?;
        self.server.predict(input.view())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Samples `X ~ N(0, I)` and labels from a random generating model.
///
/// The server output is affinely rescaled to zero mean (median for
/// classification) and unit variance over the sample, so `noise` acts as a
/// signal-to-noise knob independent of the random weights.
pub fn synth_generate(spec: &SyntheticSpec, seed: u64) -> Result<(TabularDataset, GeneratingModel)> {
    spec.validate()?;
    let seed = spec.seed.unwrap_or(seed);
    let mut rng = seed::rng(seed);
    let per = spec.features_per_party();
    let d = per * spec.parties;

    let mut parties = Vec::with_capacity(spec.parties);
    let mut columns = Vec::with_capacity(spec.parties);
    let mut flags = Vec::with_capacity(d);
    let mut names = Vec::with_capacity(d);
    for m in 0..spec.parties {
        let mut net = DenseNetwork::init(per, &spec.hidden, spec.embedding_dim, Activation::Tanh, &mut rng)?;
        let mut w = net.first_layer().weights.clone();
        for j in spec.significant_per_party..per {
            w.column_mut(j).fill(0.0);
        }
        net.set_first_layer_weights(w)?;
        parties.push(net);
        columns.push((m * per..(m + 1) * per).collect());
        for j in 0..per {
            let spurious = j >= spec.significant_per_party;
            flags.push(spurious);
            names.push(if spurious {
                format!("p{m}_spurious_{}", j - spec.significant_per_party)
            } else {
                format!("p{m}_x{j}")
            });
        }
    }
    let server_in = spec.parties * spec.embedding_dim;
    let server = DenseNetwork::init(server_in, &[], 1, Activation::Identity, &mut rng)?;
    let features = Array2::from_shape_simple_fn((spec.samples, d), || StandardNormal.sample(&mut rng));

    let mut model = GeneratingModel {
        parties,
        server,
        columns,
    };
    let raw: Vec<f64> = model.predict(&features)?.column(0).to_vec();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let centre = match spec.task {
        Task::Regression => mean,
        Task::Classification => median(&raw),
    };
    let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
    {
        let out = &mut model.server.layers_mut()[0];
        out.weights *= scale;
        out.bias.mapv_inplace(|b| (b - centre) * scale);
    }
    let clean = model.predict(&features)?;

    let labels: Vec<f64> = match spec.task {
        Task::Regression => {
            let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Domain(e.to_string()))?;
            clean.column(0).iter().map(|&f| f + noise.sample(&mut rng)).collect()
        }
        Task::Classification => clean
            .column(0)
            .iter()
            .map(|&f| {
                let class = f > 0.0;
                let flip = rng.random::<f64>() < spec.noise;
                f64::from(u8::from(class ^ flip))
            })
            .collect(),
    };
    let ds = TabularDataset::new(features, labels, names, "y".into(), flags)?;
    Ok((ds, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_regression_reproduces_labels() {
        let mut spec = SyntheticSpec::regression(2, 4, 2);
        spec.samples = 200;
        spec.noise = 0.0;
        let (ds, model) = synth_generate(&spec, 5).unwrap();
        let f = model.predict(&ds.features).unwrap();
        assert_eq!(f.column(0).to_vec(), ds.labels);
        assert_eq!(ds.n_features(), 12);
        assert_eq!(ds.spurious_flags.iter().filter(|&&s| s).count(), 4);
    }

    #[test]
    fn spurious_columns_do_not_affect_output() {
        let mut spec = SyntheticSpec::regression(3, 3, 2);
        spec.samples = 50;
        spec.noise = 0.0;
        let (ds, model) = synth_generate(&spec, 8).unwrap();
        let mut rng = seed::rng(99);
        let mut x = ds.features.clone();
        for (j, &flag) in ds.spurious_flags.iter().enumerate() {
            if flag {
                x.column_mut(j).mapv_inplace(|_| rng.random_range(-10.0..10.0));
            }
        }
        assert_eq!(model.predict(&x).unwrap(), model.predict(&ds.features).unwrap());
    }

    #[test]
    fn seeded_and_balanced() {
        let mut spec = SyntheticSpec::regression(2, 5, 2);
        spec.task = Task::Classification;
        spec.samples = 400;
        let a = synth_generate(&spec, 1).unwrap().0;
        assert_eq!(a, synth_generate(&spec, 1).unwrap().0);
        assert_ne!(a, synth_generate(&spec, 2).unwrap().0);
        let ones = a.labels.iter().filter(|&&y| y == 1.0).count();
        assert!((150..250).contains(&ones), "{ones}");
        assert_eq!(a.class_count(), Some(2));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = SyntheticSpec::regression(0, 5, 2);
        assert!(synth_generate(&spec, 1).is_err());
        spec.parties = 1;
        spec.task = Task::Classification;
        spec.noise = 0.7;
        assert!(synth_generate(&spec, 1).is_err());
    }
}
