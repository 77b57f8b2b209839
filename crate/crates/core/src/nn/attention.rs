//! Channel-wise self-attention, multi-head attention, and the patch
//! encoder / transformer pair that forms the vision-transformer branch.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::LN_EPS;
use crate::scalar::Scalar;
use crate::tensor::shape_str;

/// Views `[.., D]` as `S` sites of `D` channel tokens:
/// returns `(column [S, D, 1], row [S, 1, D])`.
fn channel_tokens<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<(Var, Var, usize)> {
    let shape = tape.shape(x).to_vec();
    let d = *shape.last().ok_or_else(|| Error::dim("channel attention on rank-0 input"))?;
    let sites = tape.value(x).len() / d;
    let col = tape.reshape(x, &[sites, d, 1])?;
    let row = tape.reshape(x, &[sites, 1, d])?;
    Ok((col, row, d))
}

/// `x_i + sum_j alpha_ij (x_j - x_i)`: the attention-weighted mean of the
/// site's channels, written so constant sites come back bit-exact.
fn attend<S: Scalar>(tape: &mut Tape<S>, alpha: Var, col: Var, row: Var, shape: &[usize]) -> Result<Var> {
    let (sites, d) = (tape.shape(col)[0], tape.shape(col)[1]);
    let diff = tape.sub(row, col)?;
    let weighted = tape.mul(alpha, diff)?;
    let ones = tape.constant(crate::tensor::Tensor::ones(vec![sites, d, 1]));
    let delta = tape.bmm(weighted, ones)?;
    let out = tape.add(col, delta)?;
    tape.reshape(out, shape)
}

/// Per-site self-attention over channels with `q_i = k_i = v_i = x_i` and
/// dot-product scores `x_i x_j`. No trainable weights.
pub fn luong_channel_attention<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (col, row, _) = channel_tokens(tape, x)?;
    let scores = tape.bmm(col, row)?;
    let alpha = tape.softmax(scores, 2)?;
    attend(tape, alpha, col, row, &shape)
}

/// Per-site self-attention over channels with additive scores
/// `x_j tanh(x_i + x_j)`. No trainable weights.
pub fn bahdanau_channel_attention<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (col, row, _) = channel_tokens(tape, x)?;
    let pair = tape.add(col, row)?;
    let th = tape.tanh(pair);
    let scores = tape.mul(th, row)?;
    let alpha = tape.softmax(scores, 2)?;
    attend(tape, alpha, col, row, &shape)
}

/// Splits `[H, L, D]` into `P x P` patches, projects each flattened patch
/// (row-major over `dy, dx, c`) by `proj` and adds a per-patch positional
/// embedding. Output is `[HL / P^2, dm]`.
pub fn patch_encode<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    patch: usize,
    proj: Var,
    pos: Var,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || patch == 0 || !shape[0].is_multiple_of(patch) || !shape[1].is_multiple_of(patch) {
        return Err(Error::config(format!(
            "patch size {patch} does not tile input {}",
            shape_str(&shape)
        )));
    }
    let (h, l, d, p) = (shape[0], shape[1], shape[2], patch);
    let grid = tape.reshape(x, &[h / p, p, l / p, p, d])?;
    let grid = tape.permute(grid, &[0, 2, 1, 3, 4])?;
    let tokens = tape.reshape(grid, &[(h / p) * (l / p), p * p * d])?;
    let emb = tape.matmul(tokens, proj)?;
    tape.add(emb, pos)
}

/// Stacked projections of a multi-head attention layer. Each `w*` is
/// `[dm, dm]`; head `j` uses columns `j * dm / n .. (j + 1) * dm / n`.
#[derive(Clone, Copy, Debug)]
pub struct MhaWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

fn affine<S: Scalar>(tape: &mut Tape<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Scaled dot-product attention per head on `[T, dm]`, concatenated and
/// projected by `wo`.
pub fn multi_head_attention<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    w: &MhaWeights,
    heads: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(Error::dim(format!("attention expects [T, dm], got {}", shape_str(&shape))));
    }
    let (t, dm) = (shape[0], shape[1]);
    if heads == 0 || dm % heads != 0 {
        return Err(Error::config(format!("model dim {dm} not divisible by {heads} heads")));
    }
    let dh = dm / heads;
    let q = affine(tape, x, w.wq, w.bq)?;
    let k = affine(tape, x, w.wk, w.bk)?;
    let v = affine(tape, x, w.wv, w.bv)?;
    let split = |tape: &mut Tape<S>, m: Var, axes: &[usize]| -> Result<Var> {
        let m = tape.reshape(m, &[t, heads, dh])?;
        tape.permute(m, axes)
    };
    let q = split(tape, q, &[1, 0, 2])?;
    let kt = split(tape, k, &[1, 2, 0])?;
    let v = split(tape, v, &[1, 0, 2])?;
    let scores = tape.bmm(q, kt)?;
    let scores = tape.scale(scores, S::one() / S::of(dh as f64).sqrt());
    let alpha = tape.softmax(scores, 2)?;
    let ctx = tape.bmm(alpha, v)?;
    let ctx = tape.permute(ctx, &[1, 0, 2])?;
    let ctx = tape.reshape(ctx, &[t, dm])?;
    affine(tape, ctx, w.wo, w.bo)
}

/// Weights of one pre-norm transformer block.
#[derive(Clone, Copy, Debug)]
pub struct TransformerWeights {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub mha: MhaWeights,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

impl TransformerWeights {
    /// Unpacks weights in the order `LayerKind::Transformer` declares them.
    pub fn from_slice(w: &[Var]) -> Self {
        assert_eq!(w.len(), 16, "transformer block has 16 weight tensors");
        Self {
            ln1_gain: w[0],
            ln1_bias: w[1],
            mha: MhaWeights {
                wq: w[2],
                bq: w[3],
                wk: w[4],
                bk: w[5],
                wv: w[6],
                bv: w[7],
                wo: w[8],
                bo: w[9],
            },
            ln2_gain: w[10],
            ln2_bias: w[11],
            ffn_w1: w[12],
            ffn_b1: w[13],
            ffn_w2: w[14],
            ffn_b2: w[15],
        }
    }
}

fn norm<S: Scalar>(tape: &mut Tape<S>, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = tape.layer_norm(x, S::of(LN_EPS));
    let n = tape.mul(n, gain)?;
    tape.add(n, bias)
}

/// `h = x + MHA(LN(x))`, `out = h + FFN(LN(h))` with
/// `FFN = relu(. W1 + b1) W2 + b2`.
pub fn transformer_block<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    w: &TransformerWeights,
    heads: usize,
) -> Result<Var> {
    let n1 = norm(tape, x, w.ln1_gain, w.ln1_bias)?;
    let a = multi_head_attention(tape, n1, &w.mha, heads)?;
    let h = tape.add(x, a)?;
    let n2 = norm(tape, h, w.ln2_gain, w.ln2_bias)?;
    let f = affine(tape, n2, w.ffn_w1, w.ffn_b1)?;
    let f = tape.relu(f);
    let f = affine(tape, f, w.ffn_w2, w.ffn_b2)?;
    tape.add(h, f)
}
