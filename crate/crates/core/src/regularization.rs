//! Group lasso over a network's input layer.
//!
//! Group `j` is column `j` of the first-layer weight matrix: every weight fed
//! by input `j`. Biases belong to no group. The proximal operator writes
//! literal zeros, so survival is tested with a strict `> 0` comparison and no
//! tolerance.

use std::collections::BTreeSet;

use ndarray::{ArrayView1, ArrayViewMut1};

use crate::nn::DenseNetwork;

/// Read-only view of one input group.
#[derive(Clone, Debug)]
pub struct InputGroupView<'a> {
    pub group_index: usize,
    pub weights: ArrayView1<'a, f64>,
}

pub fn input_groups(net: &DenseNetwork) -> impl Iterator<Item = InputGroupView<'_>> {
    net.first_layer()
        .weights
        .columns()
        .into_iter()
        .enumerate()
        .map(|(group_index, weights)| InputGroupView {
            group_index,
            weights,
        })
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub fn group_norms(net: &DenseNetwork) -> Vec<f64> {
    input_groups(net).map(|g| norm(g.weights)).collect()
}

/// `Σ_j ‖column_j‖₂` of the first layer.
pub fn group_lasso_penalty(net: &DenseNetwork) -> f64 {
    group_norms(net).iter().sum()
}

/// Closed-form prox of `threshold · ‖·‖₂` applied to one group in place.
pub fn prox_group(mut group: ArrayViewMut1<f64>, threshold: f64) {
    let n = norm(group.view());
    if n <= threshold {
        group.fill(0.0);
    } else {
        group *= 1.0 - threshold / n;
    }
}

/// Applies the group-lasso proximal operator with parameter `lambda` and
/// step size `eta` to every first-layer column. Deeper layers and biases
/// are untouched.
pub fn prox_group_lasso(net: &mut DenseNetwork, lambda: f64, eta: f64) {
    let threshold = lambda * eta;
    if threshold == 0.0 {
        return;
    }
    let first = &mut net.layers_mut()[0];
    for column in first.weights.columns_mut() {
        prox_group(column, threshold);
    }
}

/// Indices of groups with strictly positive norm.
pub fn surviving_groups(net: &DenseNetwork) -> BTreeSet<usize> {
    input_groups(net)
        .filter(|g| g.weights.iter().any(|&w| w != 0.0))
        .map(|g| g.group_index)
        .collect()
}
