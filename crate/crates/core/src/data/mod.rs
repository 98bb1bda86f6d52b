//! Tabular datasets, noise-feature injection, vertical partitioning and
//! the synthetic generating model.

mod csv_io;
mod partition;
mod synth;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

pub use csv_io::{load_csv, save_csv, save_flags, LabelColumn};
pub use partition::{partition, PartitionScheme, PartitionSpec, Partitioned};
pub use synth::{synth_generate, GeneratingModel, SyntheticSpec, Task};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub features: Array2<f64>,
    /// Real targets or class indices stored as reals.
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub label_name: String,
    /// Ground-truth non-significant features, when known.
    pub spurious_flags: Vec<bool>,
}

impl TabularDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<f64>,
        feature_names: Vec<String>,
        label_name: String,
        spurious_flags: Vec<bool>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if labels.len() != n {
            return Err(Error::shape("labels", n, labels.len()));
        }
        if feature_names.len() != d || spurious_flags.len() != d {
            return Err(Error::shape(
                "feature metadata",
                d,
                format!("{} names / {} flags", feature_names.len(), spurious_flags.len()),
            ));
        }
        if !features.iter().chain(&labels).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        Ok(TabularDataset {
            features,
            labels,
            feature_names,
            label_name,
            spurious_flags,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
            spurious_flags: self.spurious_flags.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.select(Axis(1), cols),
            labels: self.labels.clone(),
            feature_names: cols.iter().map(|&j| self.feature_names[j].clone()).collect(),
            label_name: self.label_name.clone(),
            spurious_flags: cols.iter().map(|&j| self.spurious_flags[j]).collect(),
        }
    }

    /// The dataset restricted to features not flagged as spurious.
    pub fn without_spurious(&self) -> TabularDataset {
        let keep: Vec<usize> = (0..self.n_features())
            .filter(|&j| !self.spurious_flags[j])
            .collect();
        self.select_columns(&keep)
    }

    /// Class count when labels are non-negative integers.
    pub fn class_count(&self) -> Option<usize> {
        let integral = self
            .labels
            .iter()
            .all(|&y| y >= 0.0 && y.fract() == 0.0 && y < u32::MAX as f64);
        integral.then(|| self.labels.iter().fold(0.0f64, |m, &y| m.max(y)) as usize + 1)
    }
}

/// Appends `⌊ratio · d⌋` standard-normal columns flagged as spurious.
pub fn inject_spurious(ds: &TabularDataset, ratio: f64, seed: u64) -> Result<TabularDataset> {
    if !(ratio.is_finite() && ratio >= 0.0) {
        return Err(Error::config("spurious_ratio", "must be finite and non-negative"));
    }
    let extra = (ratio * ds.n_features() as f64).floor() as usize;
    if extra == 0 {
        return Ok(ds.clone());
    }
    let mut rng = seed::rng(seed);
    let noise = Array2::from_shape_simple_fn((ds.n_samples(), extra), || {
        StandardNormal.sample(&mut rng)
    });
    let features = concatenate(Axis(1), &[ds.features.view(), noise.view()])
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut names = ds.feature_names.clone();
    names.extend((0..extra).map(|k| format!("spurious_{k}")));
    let mut flags = ds.spurious_flags.clone();
    flags.extend(std::iter::repeat_n(true, extra));
    TabularDataset::new(features, ds.labels.clone(), names, ds.label_name.clone(), flags)
}

/// Seeded shuffle split into `(train, test)` row index lists.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train_fraction", "must lie strictly between 0 and 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let n_train = (train_fraction * n as f64).round() as usize;
    let test = order.split_off(n_train);
    Ok((order, test))
}

pub fn split(ds: &TabularDataset, train_fraction: f64, seed: u64) -> Result<(TabularDataset, TabularDataset)> {
    let (train, test) = split_indices(ds.n_samples(), train_fraction, seed)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

/// Per-column z-score parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on `features`; zero-variance columns get unit scale.
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(features.ncols());
        let mut std = Vec::with_capacity(features.ncols());
        for col in features.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, features: &mut Array2<f64>) {
        for (j, mut col) in features.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
    }
}
