//! Raw forward and backward kernels over flat row-major buffers.
//!
//! The tape in [`crate::autograd`] owns shapes and bookkeeping; these
//! functions only do arithmetic.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::shape_str;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, zero padding split top/bottom with
    /// the extra row (if any) at the bottom.
    Same,
    /// No padding; output extent `(in - k) / stride + 1`.
    Valid,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

impl std::str::FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            other => Err(Error::config(format!("unknown padding `{other}`"))),
        }
    }
}

/// Resolved geometry of one 2D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub groups: usize,
    pub sy: usize,
    pub sx: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

fn out_extent(n: usize, k: usize, s: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if k > n {
                return Err(Error::dim(format!("kernel extent {k} exceeds input extent {n}")));
            }
            Ok(((n - k) / s + 1, 0))
        }
    }
}

impl ConvGeom {
    /// `input` is `[H, W, Cin]`, `kernel` is `[Kh, Kw, Cin / groups, Cout]`.
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: (usize, usize),
        padding: Padding,
        groups: usize,
    ) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects HxWxC input and KhxKwxCxC' kernel, got {} and {}",
                shape_str(input),
                shape_str(kernel)
            )));
        }
        let (sy, sx) = stride;
        if sy == 0 || sx == 0 {
            return Err(Error::config("conv2d stride must be at least 1"));
        }
        if groups == 0 || !input[2].is_multiple_of(groups) || !kernel[3].is_multiple_of(groups) {
            return Err(Error::config(format!(
                "conv2d groups {groups} must divide input channels {} and filters {}",
                input[2], kernel[3]
            )));
        }
        if kernel[2] * groups != input[2] {
            return Err(Error::dim(format!(
                "conv2d kernel expects {} input channels, input has {}",
                kernel[2] * groups,
                input[2]
            )));
        }
        let (oh, pad_top) = out_extent(input[0], kernel[0], sy, padding)?;
        let (ow, pad_left) = out_extent(input[1], kernel[1], sx, padding)?;
        Ok(Self {
            h: input[0],
            w: input[1],
            cin: input[2],
            kh: kernel[0],
            kw: kernel[1],
            cout: kernel[3],
            groups,
            sy,
            sx,
            pad_top,
            pad_left,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.oh, self.ow, self.cout]
    }

    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.sy + ky).checked_sub(self.pad_top)?;
        let ix = (ox * self.sx + kx).checked_sub(self.pad_left)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// Cross-correlation with optional bias.
pub fn conv2d_forward<S: Scalar>(g: &ConvGeom, x: &[S], k: &[S], bias: Option<&[S]>) -> Vec<S> {
    let cig = g.cin / g.groups;
    let cog = g.cout / g.groups;
    let mut out = vec![S::zero(); g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            if let Some(b) = bias {
                o.copy_from_slice(b);
            }
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some((iy, ix)) = g.src(oy, ox, ky, kx) else { continue };
                    let xin = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let kbase = (ky * g.kw + kx) * cig * g.cout;
                    for grp in 0..g.groups {
                        let og = &mut o[grp * cog..][..cog];
                        for ci in 0..cig {
                            let xv = xin[grp * cig + ci];
                            let krow = &k[kbase + ci * g.cout + grp * cog..][..cog];
                            for (acc, &kv) in og.iter_mut().zip(krow) {
                                *acc += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dk, dbias)` given the output adjoint `dy`.
pub fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    k: &[S],
    dy: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let cig = g.cin / g.groups;
    let cog = g.cout / g.groups;
    let mut dx = vec![S::zero(); x.len()];
    let mut dk = vec![S::zero(); k.len()];
    let mut db = vec![S::zero(); g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let d = &dy[(oy * g.ow + ox) * g.cout..][..g.cout];
            for (acc, &v) in db.iter_mut().zip(d) {
                *acc += v;
            }
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some((iy, ix)) = g.src(oy, ox, ky, kx) else { continue };
                    let xoff = (iy * g.w + ix) * g.cin;
                    let kbase = (ky * g.kw + kx) * cig * g.cout;
                    for grp in 0..g.groups {
                        let dg = &d[grp * cog..][..cog];
                        for ci in 0..cig {
                            let xi = xoff + grp * cig + ci;
                            let xv = x[xi];
                            let koff = kbase + ci * g.cout + grp * cog;
                            let krow = &k[koff..][..cog];
                            let mut sx = S::zero();
                            for (&kv, &dv) in krow.iter().zip(dg) {
                                sx += kv * dv;
                            }
                            dx[xi] += sx;
                            for (acc, &dv) in dk[koff..][..cog].iter_mut().zip(dg) {
                                *acc += xv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

/// `[m, k] x [k, n]`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            for (acc, &bv) in crow.iter_mut().zip(&b[p * n..][..n]) {
                *acc += av * bv;
            }
        }
    }
    c
}

/// Gradients of `C = A B` with respect to `A` and `B`.
pub fn matmul_backward<S: Scalar>(
    a: &[S],
    b: &[S],
    dc: &[S],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<S>, Vec<S>) {
    let mut da = vec![S::zero(); m * k];
    let mut db = vec![S::zero(); k * n];
    for i in 0..m {
        let drow = &dc[i * n..][..n];
        for p in 0..k {
            let brow = &b[p * n..][..n];
            let mut s = S::zero();
            for (&bv, &dv) in brow.iter().zip(drow) {
                s += bv * dv;
            }
            da[i * k + p] = s;
            let av = a[i * k + p];
            for (acc, &dv) in db[p * n..][..n].iter_mut().zip(drow) {
                *acc += av * dv;
            }
        }
    }
    (da, db)
}

/// Row-major strides of `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(format!(
                    "cannot broadcast {} with {}",
                    shape_str(a),
                    shape_str(b)
                )))
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast shape `out`; broadcast
/// axes get stride 0.
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < lead || shape[i - lead] == 1 { 0 } else { own[i - lead] })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out`.
pub fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..total {
        f(o, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Max-subtracted softmax along `axis`.
pub fn softmax<S: Scalar>(x: &[S], shape: &[usize], axis: usize) -> Vec<S> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut y = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut m = S::neg_infinity();
            for j in 0..len {
                m = m.max(x[at(j)]);
            }
            let mut z = S::zero();
            for j in 0..len {
                let e = (x[at(j)] - m).exp();
                y[at(j)] = e;
                z += e;
            }
            for j in 0..len {
                y[at(j)] /= z;
            }
        }
    }
    y
}

pub fn softmax_backward<S: Scalar>(y: &[S], dy: &[S], shape: &[usize], axis: usize) -> Vec<S> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut dx = vec![S::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut dot = S::zero();
            for j in 0..len {
                dot += y[at(j)] * dy[at(j)];
            }
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
            }
        }
    }
    dx
}

/// Normalizes each row of length `d`; returns `(xhat, inv_std per row)`.
pub fn layer_norm<S: Scalar>(x: &[S], d: usize, eps: S) -> (Vec<S>, Vec<S>) {
    let rows = x.len() / d;
    let n = S::of(d as f64);
    let mut y = vec![S::zero(); x.len()];
    let mut inv = vec![S::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..][..d];
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let is = S::one() / (var + eps).sqrt();
        inv[r] = is;
        for (o, &v) in y[r * d..][..d].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    (y, inv)
}

pub fn layer_norm_backward<S: Scalar>(xhat: &[S], inv: &[S], dy: &[S], d: usize) -> Vec<S> {
    let n = S::of(d as f64);
    let mut dx = vec![S::zero(); xhat.len()];
    for (r, &is) in inv.iter().enumerate() {
        let yh = &xhat[r * d..][..d];
        let g = &dy[r * d..][..d];
        let mg = g.iter().copied().sum::<S>() / n;
        let mgy = g.iter().zip(yh).map(|(&a, &b)| a * b).sum::<S>() / n;
        for j in 0..d {
            dx[r * d + j] = is * (g[j] - mg - yh[j] * mgy);
        }
    }
    dx
}

/// Permutes axes: output axis `i` is input axis `axes[i]`.
pub fn permute<S: Scalar>(x: &[S], shape: &[usize], axes: &[usize]) -> (Vec<S>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let zero = vec![0; out_shape.len()];
    let mut out = vec![S::zero(); x.len()];
    for_each_broadcast(&out_shape, &src_strides, &zero, |o, src, _| out[o] = x[src]);
    (out, out_shape)
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
