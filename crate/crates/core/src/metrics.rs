//! Run metrics: spurious-feature removal, communication cost to reach
//! accuracy/removal targets, and an empirical input-significance probe.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseNetwork;
use crate::protocol::Phase;

/// Fraction of flagged features whose mask entry is `false`. Vacuously 1.0
/// when nothing is flagged.
pub fn spurious_removed_fraction(mask: &[bool], flags: &[bool]) -> Result<f64> {
    if mask.len() != flags.len() {
        return Err(Error::shape("feature mask", flags.len(), mask.len()));
    }
    let flagged = flags.iter().filter(|&&f| f).count();
    if flagged == 0 {
        return Ok(1.0);
    }
    let removed = mask.iter().zip(flags).filter(|(&m, &f)| f && !m).count();
    Ok(removed as f64 / flagged as f64)
}

/// Scatters per-party masks into global column order.
pub fn global_mask(per_party: &[Vec<bool>], columns: &[Vec<usize>]) -> Vec<bool> {
    let d = columns.iter().map(Vec::len).sum();
    let mut out = vec![true; d];
    for (mask, cols) in per_party.iter().zip(columns) {
        for (&alive, &j) in mask.iter().zip(cols) {
            out[j] = alive;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsPoint {
    /// Cumulative communication rounds at the time of logging.
    pub step: u64,
    pub phase: Phase,
    pub epoch: usize,
    pub cumulative_mb: f64,
    pub train_loss: Option<f64>,
    pub test_loss: f64,
    pub test_accuracy: Option<f64>,
    pub spurious_removed_fraction: f64,
    pub surviving_features: Vec<usize>,
    pub components: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default = "default_accuracy_fraction")]
    pub accuracy_fraction: f64,
    #[serde(default = "default_removal")]
    pub removal: f64,
}

fn default_accuracy_fraction() -> f64 {
    0.9
}
fn default_removal() -> f64 {
    0.8
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec {
            accuracy_fraction: default_accuracy_fraction(),
            removal: default_removal(),
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("targets.accuracy_fraction", self.accuracy_fraction),
            ("targets.removal", self.removal),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(field, "must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Smallest cumulative MB at which test accuracy reaches
/// `accuracy_fraction · baseline_best` and removal reaches `removal`
/// at the same logged point.
pub fn cost_to_targets(series: &[MetricsPoint], baseline_best: f64, targets: &TargetSpec) -> Option<f64> {
    let bar = targets.accuracy_fraction * baseline_best;
    series
        .iter()
        .find(|p| {
            p.test_accuracy.is_some_and(|a| a >= bar) && p.spurious_removed_fraction >= targets.removal
        })
        .map(|p| p.cumulative_mb)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    Significant,
    NonSignificant,
}

/// 11 evenly spaced values in `[-3, 3]` plus the observed min and max of
/// column `j` of the probes.
pub fn default_grid(probes: ArrayView2<f64>, j: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..11).map(|i| -3.0 + 0.6 * i as f64).collect();
    if probes.nrows() > 0 {
        let col = probes.column(j);
        grid.push(col.fold(f64::INFINITY, |m, &v| m.min(v)));
        grid.push(col.fold(f64::NEG_INFINITY, |m, &v| m.max(v)));
    }
    grid
}

/// Finite approximation of "replacing input `j` by any value never changes
/// the output": NonSignificant iff, for every probe row and every grid value,
/// every output moves by at most `tol`.
pub fn check_significance(
    net: &DenseNetwork,
    j: usize,
    probes: ArrayView2<f64>,
    grid: &[f64],
    tol: f64,
) -> Result<Significance> {
    if grid.is_empty() {
        return Err(Error::Domain("significance grid is empty".into()));
    }
    if j >= net.input_dim() {
        return Err(Error::Range {
            index: j,
            len: net.input_dim(),
            context: "significance input".into(),
        });
    }
    let base = net.predict(probes)?;
    let mut replaced: Array2<f64> = probes.to_owned();
    for &s in grid {
        replaced.column_mut(j).fill(s);
        let out = net.predict(replaced.view())?;
        let moved = out
            .iter()
            .zip(base.iter())
            .any(|(a, b)| (a - b).abs() > tol);
        if moved {
            return Ok(Significance::Significant);
        }
    }
    Ok(Significance::NonSignificant)
}
