//! Tape-free versions of the primitive operations.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2D convolution of `[H, W, C]` with `[Kh, Kw, C, C']` plus optional
/// per-filter bias.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernels: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor<S>> {
    let g = ConvGeom::new(input.shape(), kernels.shape(), stride, padding, 1)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::dim(format!("bias of length {} for {} filters", b.len(), g.cout)));
        }
    }
    let out = kernels::conv2d_forward(&g, input.data(), kernels.data(), bias.map(Tensor::data));
    Tensor::new(g.out_shape(), out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<S: Scalar>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    if axis >= x.rank() {
        return Err(Error::dim(format!("softmax axis {axis} out of range for rank {}", x.rank())));
    }
    Tensor::new(x.shape().to_vec(), kernels::softmax(x.data(), x.shape(), axis))
}
