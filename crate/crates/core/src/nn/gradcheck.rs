//! Central finite differences over every parameter and input, used as the
//! verification oracle for [`DenseNetwork::backward`].

use ndarray::{Array2, ArrayView2};

use super::network::{DenseNetwork, GradientSet};
use crate::error::{Error, Result};

/// Approximates `d loss(net(batch)) / d θ` with step `h` for every weight,
/// bias and input entry.
pub fn finite_diff_grad<F>(
    net: &DenseNetwork,
    batch: ArrayView2<f64>,
    loss: F,
    h: f64,
) -> Result<GradientSet>
where
    F: Fn(&Array2<f64>) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step {h}")));
    }
    let mut grads = GradientSet::zeros_like(net, batch.nrows());
    let mut probe = net.clone();

    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let base = net.layers()[l].weights[[r, c]];
                let value = central(h, |delta| {
                    probe.layers_mut()[l].weights[[r, c]] = base + delta;
                    probe.predict(batch).map(|o| loss(&o))
                })?;
                probe.layers_mut()[l].weights[[r, c]] = base;
                grads.layers[l].weights[[r, c]] = value;
            }
        }
        for r in 0..rows {
            let base = net.layers()[l].bias[r];
            let value = central(h, |delta| {
                probe.layers_mut()[l].bias[r] = base + delta;
                probe.predict(batch).map(|o| loss(&o))
            })?;
            probe.layers_mut()[l].bias[r] = base;
            grads.layers[l].bias[r] = value;
        }
    }

    let mut input = batch.to_owned();
    for i in 0..input.nrows() {
        for j in 0..input.ncols() {
            let base = input[[i, j]];
            let value = central(h, |delta| {
                input[[i, j]] = base + delta;
                net.predict(input.view()).map(|o| loss(&o))
            })?;
            input[[i, j]] = base;
            grads.input[[i, j]] = value;
        }
    }
    Ok(grads)
}

fn central<E>(h: f64, mut eval: E) -> Result<f64>
where
    E: FnMut(f64) -> Result<f64>,
{
    let plus = eval(h)?;
    let minus = eval(-h)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Largest relative deviation between two gradient sets, with
/// `|a − b| / max(|a|, |b|, floor)` per entry. Inputs are included.
pub fn max_relative_error(a: &GradientSet, b: &GradientSet, floor: f64) -> f64 {
    let pa = a.parameter_values().chain(a.input.iter().copied());
    let pb = b.parameter_values().chain(b.input.iter().copied());
    pa.zip(pb)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
