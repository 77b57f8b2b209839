//! Wing loss and the evaluation metrics.

use std::fmt;

use crate::autograd::{wing_constant, wing_value};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

pub const WING_WIDTH: f64 = 10.0;
pub const WING_CURVATURE: f64 = 2.0;
/// Default PCK threshold as a fraction of the landmark box diagonal.
pub const ACCURACY_TAU: f64 = 0.25;

fn check_pair<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, what: &str) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "{what}: prediction {} vs target {}",
            shape_str(pred.shape()),
            shape_str(target.shape())
        )));
    }
    Ok(())
}

/// Wing penalty summed over all coordinates, averaged over the leading
/// (batch) axis.
pub fn wing_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, w: f64, eps: f64) -> Result<f64> {
    check_pair(pred, target, "wing_loss")?;
    if !(w > 0.0 && eps > 0.0) {
        return Err(Error::Contract(format!("wing loss needs w > 0 and eps > 0, got {w}, {eps}")));
    }
    let c = wing_constant(w, eps);
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| wing_value(a.f64() - b.f64(), w, eps, c))
        .sum();
    Ok(total / pred.shape()[0] as f64)
}

pub fn mae<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    check_pair(pred, target, "mae")?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a.f64() - b.f64()).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn mse<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    check_pair(pred, target, "mse")?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a.f64() - b.f64()).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

/// Fraction of landmarks within `tau` times the diagonal of the
/// ground-truth landmark bounding box, measured in pixels.
///
/// `pred` and `target` are `[B, 2, N]` (or a single `[2, N]`) in normalized
/// coordinates: row 0 holds `x / W`, row 1 holds `y / H`. A degenerate box
/// falls back to the image diagonal.
pub fn accuracy<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, tau: f64, dims: (usize, usize)) -> Result<f64> {
    check_pair(pred, target, "accuracy")?;
    if tau <= 0.0 {
        return Err(Error::Contract(format!("accuracy needs tau > 0, got {tau}")));
    }
    let shape = pred.shape();
    if shape.len() < 2 || shape[shape.len() - 2] != 2 {
        return Err(Error::Dimension(format!("accuracy expects [.., 2, N], got {}", shape_str(shape))));
    }
    let n = shape[shape.len() - 1];
    let (h, w) = (dims.0 as f64, dims.1 as f64);
    let (p, t) = (pred.to_f64_vec(), target.to_f64_vec());
    let mut hits = 0usize;
    for (ps, ts) in p.chunks_exact(2 * n).zip(t.chunks_exact(2 * n)) {
        let tx: Vec<f64> = ts[..n].iter().map(|v| v * w).collect();
        let ty: Vec<f64> = ts[n..].iter().map(|v| v * h).collect();
        let span = |v: &[f64]| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        let mut diag = span(&tx).hypot(span(&ty));
        if diag == 0.0 {
            diag = w.hypot(h);
        }
        for i in 0..n {
            let d = (ps[i] * w - tx[i]).hypot(ps[n + i] * h - ty[i]);
            if d <= tau * diag {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (p.len() / 2) as f64)
}

/// Metrics for one evaluation pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub wing_loss: f64,
    pub mae: f64,
    pub mse: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub const TSV_HEADER: &'static str = "accuracy\twing_loss\tmae\tmse\tn_samples";

    /// All four metrics for stacked `[B, 2, N]` predictions.
    pub fn compute<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, dims: (usize, usize)) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(pred, target, ACCURACY_TAU, dims)?,
            wing_loss: wing_loss(pred, target, WING_WIDTH, WING_CURVATURE)?,
            mae: mae(pred, target)?,
            mse: mse(pred, target)?,
            n_samples: pred.shape()[0],
        })
    }

    pub fn tsv_row(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}\t{}", self.accuracy, self.wing_loss, self.mae, self.mse, self.n_samples)
    }
}
