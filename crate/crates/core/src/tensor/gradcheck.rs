//! Central finite-difference checking of tape gradients.
//!
//! The numerical side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it is checking.

use super::{Real, Tape, Tensor, Var};
use crate::error::Result;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both are zero.
pub fn relative_error<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x.as_f64(), y.as_f64());
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt().max(nb.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Central differences of a scalar function of several tensors, one tensor
/// of partials per input.
pub fn numerical_gradients(
    inputs: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    h: f64,
) -> Result<Vec<Tensor<f64>>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        for e in 0..inputs[k].len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + h;
            let plus = f(&work)?;
            work[k].data_mut()[e] = orig - h;
            let minus = f(&work)?;
            work[k].data_mut()[e] = orig;
            g.data_mut()[e] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Records `build` with every input as a trainable leaf, compares the
/// analytic gradients to central differences, and returns the worst
/// per-input relative error.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    h: f64,
) -> Result<f64> {
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let numeric = numerical_gradients(inputs, eval, h)?;
    let mut worst: f64 = 0.0;
    for (v, n) in vars.iter().zip(&numeric) {
        let zero = Tensor::zeros(n.rows(), n.cols());
        let a = grads.get(*v).unwrap_or(&zero);
        worst = worst.max(relative_error(a, n));
    }
    Ok(worst)
}
