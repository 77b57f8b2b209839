use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::scalar::Scalar;

/// Convolution with bias and optional ReLU.
pub fn conv_layer<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    kernel: Var,
    bias: Var,
    stride: usize,
    padding: Padding,
    relu: bool,
) -> Result<Var> {
    let y = tape.conv2d(x, kernel, Some(bias), (stride, stride), padding, 1)?;
    Ok(if relu { tape.relu(y) } else { y })
}

/// Weights of one ResNeXt transform: a 1x1 reduction from `D` to `D / C`
/// channels, ReLU, then a `k x k` convolution at width `D / C`.
#[derive(Clone, Copy, Debug)]
pub struct ResnextPath {
    pub reduce_kernel: Var,
    pub reduce_bias: Var,
    pub conv_kernel: Var,
    pub conv_bias: Var,
}

/// `y = x + concat(T_0(x), ..., T_{C-1}(x))` over the channel axis.
///
/// Each path must emit `D / C` channels so the concatenation lines up with
/// the input.
pub fn resnext_block<S: Scalar>(tape: &mut Tape<S>, x: Var, paths: &[ResnextPath]) -> Result<Var> {
    let d = *tape.shape(x).last().ok_or_else(|| Error::dim("resnext input has no channels"))?;
    let c = paths.len();
    if c == 0 || d % c != 0 {
        return Err(Error::config(format!("resnext cardinality {c} does not divide {d} channels")));
    }
    let mut outs = Vec::with_capacity(c);
    for p in paths {
        let r = tape.conv2d(x, p.reduce_kernel, Some(p.reduce_bias), (1, 1), Padding::Same, 1)?;
        let r = tape.relu(r);
        let t = tape.conv2d(r, p.conv_kernel, Some(p.conv_bias), (1, 1), Padding::Same, 1)?;
        if tape.shape(t).last() != Some(&(d / c)) {
            return Err(Error::dim(format!(
                "resnext path emits {:?} channels, expected {}",
                tape.shape(t).last(),
                d / c
            )));
        }
        outs.push(t);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
    tape.add(x, cat)
}
