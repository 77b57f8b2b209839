use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// `x W + b` for a rank-1 `x`, optionally followed by ReLU.
pub fn dense<S: Scalar>(tape: &mut Tape<S>, x: Var, weight: Var, bias: Var, relu: bool) -> Result<Var> {
    let n = tape.value(x).len();
    let row = tape.reshape(x, &[1, n])?;
    let y = tape.matmul(row, weight)?;
    let y = tape.flatten(y)?;
    let y = tape.add(y, bias)?;
    Ok(if relu { tape.relu(y) } else { y })
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
/// Identity in evaluation mode.
pub fn dropout<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = S::of(1.0 / (1.0 - rate));
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.uniform() < rate { S::zero() } else { keep })
        .collect();
    tape.mask(x, mask)
}
