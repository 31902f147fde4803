//! Central finite-difference gradient checks in 64-bit arithmetic, used by
//! the test suites to validate every analytic gradient.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest [`rel_error`] between two equally shaped tensors.
pub fn max_rel_error(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "max_rel_error",
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_error(x, y))
        .fold(0.0, f64::max))
}

/// Central differences of a scalar function at `x`.
pub fn numeric_gradient(
    x: &Tensor<f64>,
    step: f64,
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<Tensor<f64>> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences, for every input. Returns the worst relative error.
pub fn check_tape(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|v| tape.variable(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let root = build(&mut tape, &vars)?;
        if tape.value(root).len() != 1 {
            return Err(Error::invalid(
                "check_tape",
                "the built value must be a scalar",
            ));
        }
        Ok((tape, vars, root))
    };
    let (tape, vars, root) = eval(inputs)?;
    let grads = tape.backward(root)?;
    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = numeric_gradient(&inputs[i], FD_STEP, |probe| {
            let mut values = inputs.to_vec();
            values[i] = probe.clone();
            let (tape, _, root) = eval(&values)?;
            Ok(tape.value(root).item())
        })?;
        worst = worst.max(max_rel_error(&analytic, &numeric)?);
    }
    Ok(worst)
}
