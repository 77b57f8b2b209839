//! Central finite-difference verification of tape gradients.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`,
/// where `numeric` is the central difference with step `h`.
///
/// `f` must build a scalar from its input on the given tape.
pub fn gradient_check<S, F>(f: F, x: &Tensor<S>, h: S) -> Result<f64>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    gradient_check_at(f, x, h, &coords)
}

/// [`gradient_check`] restricted to the listed flat coordinates.
pub fn gradient_check_at<S, F>(f: F, x: &Tensor<S>, h: S, coords: &[usize]) -> Result<f64>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let analytic = analytic_grad(&f, x)?;
    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = x.detached();
        plus.data_mut()[i] += h;
        let mut minus = x.detached();
        minus.data_mut()[i] -= h;
        let fp = evaluate(&f, plus)?;
        let fm = evaluate(&f, minus)?;
        let numeric = (fp - fm) / (S::of(2.0) * h);
        let a = analytic[i];
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!("non-finite difference at coordinate {i}")));
        }
        let rel = (a - numeric).abs().f64() / a.abs().f64().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Gradient of `f` at `x` from the tape.
pub fn analytic_grad<S, F>(f: &F, x: &Tensor<S>) -> Result<Vec<S>>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.detached().with_requires_grad(true));
    let y = f(&mut tape, xv)?;
    check_finite(tape.value(y))?;
    tape.backward(y)?;
    let g = tape.grad(xv).map(<[S]>::to_vec).unwrap_or_else(|| vec![S::zero(); x.len()]);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite analytic gradient".into()));
    }
    Ok(g)
}

fn evaluate<S, F>(f: &F, x: Tensor<S>) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = f(&mut tape, xv)?;
    check_finite(tape.value(y))?;
    tape.value(y).item()
}

fn check_finite<S: Scalar>(t: &Tensor<S>) -> Result<()> {
    if !t.all_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    Ok(())
}
