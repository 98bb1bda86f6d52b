use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(1/N) Σ_i Σ_k (f_ik − y_ik)²`, gradient `2(f − y)/N`.
    SquaredError,
    /// Mean negative log-likelihood of the softmax of the outputs.
    SoftmaxCrossEntropy,
}

/// Training targets, held by the server.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// One row per sample, one column per network output.
    Real(Array2<f64>),
    /// One class index per sample.
    Classes { index: Vec<usize>, classes: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(y) => y.nrows(),
            Labels::Classes { index, .. } => index.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Labels::Classes { .. })
    }

    pub fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Real(y) => Labels::Real(y.select(Axis(0), rows)),
            Labels::Classes { index, classes } => Labels::Classes {
                index: rows.iter().map(|&i| index[i]).collect(),
                classes: *classes,
            },
        }
    }

    /// Dense targets for a squared-error fit against `width` outputs. Class
    /// labels become the index itself for one output and one-hot otherwise.
    fn dense_targets(&self, width: usize) -> Result<Array2<f64>> {
        match self {
            Labels::Real(y) => Ok(y.clone()),
            Labels::Classes { index, .. } => {
                check_indices(index, if width == 1 { 2 } else { width })?;
                if width == 1 {
                    Ok(Array2::from_shape_fn((index.len(), 1), |(i, _)| index[i] as f64))
                } else {
                    Ok(Array2::from_shape_fn((index.len(), width), |(i, k)| {
                        if index[i] == k {
                            1.0
                        } else {
                            0.0
                        }
                    }))
                }
            }
        }
    }
}

fn check_indices(index: &[usize], width: usize) -> Result<()> {
    match index.iter().find(|&&c| c >= width) {
        Some(&c) => Err(Error::Domain(format!(
            "class label {c} out of range for {width} outputs"
        ))),
        None => Ok(()),
    }
}

/// Batch-mean loss and its exact gradient with respect to `outputs`.
/// An empty batch has loss 0.
pub fn loss_and_grad(
    kind: LossKind,
    outputs: ArrayView2<f64>,
    labels: &Labels,
) -> Result<(f64, Array2<f64>)> {
    let n = outputs.nrows();
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    if n == 0 {
        return Ok((0.0, Array2::zeros(outputs.raw_dim())));
    }
    let inv_n = 1.0 / n as f64;
    match kind {
        LossKind::SquaredError => {
            let targets = labels.dense_targets(outputs.ncols())?;
            if targets.dim() != outputs.dim() {
                return Err(Error::shape(
                    "squared-error targets",
                    format!("{:?}", outputs.dim()),
                    format!("{:?}", targets.dim()),
                ));
            }
            let diff = &outputs - &targets;
            let loss = diff.iter().map(|d| d * d).sum::<f64>() * inv_n;
            Ok((loss, diff * (2.0 * inv_n)))
        }
        LossKind::SoftmaxCrossEntropy => {
            let Labels::Classes { index, .. } = labels else {
                return Err(Error::Domain(
                    "softmax cross-entropy needs class labels".into(),
                ));
            };
            check_indices(index, outputs.ncols())?;
            let mut grad = Array2::zeros(outputs.raw_dim());
            let mut loss = 0.0;
            for (i, row) in outputs.outer_iter().enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                let log_z = max + sum.ln();
                loss += log_z - row[index[i]];
                for (k, &v) in row.iter().enumerate() {
                    let p = (v - log_z).exp();
                    let target = if k == index[i] { 1.0 } else { 0.0 };
                    grad[[i, k]] = (p - target) * inv_n;
                }
            }
            Ok((loss * inv_n, grad))
        }
    }
}

/// Fraction of rows whose predicted class matches the label; `None` for
/// real-valued targets. A single output predicts class 1 above 0.5.
pub fn accuracy(outputs: ArrayView2<f64>, labels: &Labels) -> Option<f64> {
    let Labels::Classes { index, .. } = labels else {
        return None;
    };
    if index.is_empty() {
        return Some(0.0);
    }
    let correct = outputs
        .outer_iter()
        .zip(index)
        .filter(|(row, &label)| {
            let predicted = if row.len() == 1 {
                usize::from(row[0] > 0.5)
            } else {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                        if v > best.1 {
                            (k, v)
                        } else {
                            best
                        }
                    })
                    .0
            };
            predicted == label
        })
        .count();
    Some(correct as f64 / index.len() as f64)
}
