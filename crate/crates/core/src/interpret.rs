//! Activation maximization: gradient ascent on the input image.

use std::fmt::Write as _;
use std::path::Path;

use crate::autograd::{Tape, Var};
use crate::config::Config;
use crate::data::write_png;
use crate::error::{Error, Result};
use crate::model::BuiltModel;
use crate::nn::Mode;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TRACE_FILE: &str = "dream_trace.tsv";
pub const IMAGE_FILE: &str = "dream.png";
/// Consecutive zero-gradient steps after which ascent gives up.
pub const STALL_STEPS: usize = 5;
pub const NOISE_STREAM: u64 = 0x4452_4541;

#[derive(Clone, Debug, PartialEq)]
pub struct DreamConfig {
    pub layer: String,
    pub channel: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    pub normalize_grad: bool,
}

impl Default for DreamConfig {
    fn default() -> Self {
        Self { layer: "stem.0".into(), channel: 0, steps: 50, step_size: 0.05, seed: 0, normalize_grad: true }
    }
}

impl DreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("dream.steps must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!("dream.step_size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }

    pub fn config_keys() -> Vec<&'static str> {
        vec!["dream.layer", "dream.channel", "dream.steps", "dream.step_size", "dream.normalize_grad"]
    }

    pub fn to_config(&self, cfg: &mut Config) {
        cfg.set("dream.layer", &self.layer);
        cfg.set("dream.channel", self.channel);
        cfg.set("dream.steps", self.steps);
        cfg.set("dream.step_size", self.step_size);
        cfg.set("dream.normalize_grad", self.normalize_grad);
    }

    pub fn from_config(cfg: &Config, seed: u64) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            layer: cfg.raw("dream.layer").unwrap_or(&d.layer).to_string(),
            channel: cfg.get_or("dream.channel", d.channel)?,
            steps: cfg.get_or("dream.steps", d.steps)?,
            step_size: cfg.get_or("dream.step_size", d.step_size)?,
            seed,
            normalize_grad: cfg.get_or("dream.normalize_grad", d.normalize_grad)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DreamStatus {
    Completed,
    /// The gradient was exactly zero for [`STALL_STEPS`] steps in a row,
    /// ending at this step.
    Stalled { step: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dream<S = f64> {
    pub image: Tensor<S>,
    /// Objective before the first step and after every step taken.
    pub trace: Vec<f64>,
    pub status: DreamStatus,
}

impl<S: Scalar> Dream<S> {
    pub fn trace_tsv(&self) -> String {
        let mut s = String::from("step\tobjective\n");
        for (i, v) in self.trace.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{v}");
        }
        s
    }

    /// Writes `dream.png` and `dream_trace.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_png(&self.image.cast(), &dir.join(IMAGE_FILE))?;
        let p = dir.join(TRACE_FILE);
        std::fs::write(&p, self.trace_tsv()).map_err(|e| Error::io(p, e))
    }
}

/// Ascends `objective` from seeded uniform noise in `[0.4, 0.6]`:
/// `x <- clip(x + step * g / (|g| + 1e-8), 0, 1)`, or `x + step * g` without
/// normalization.
pub fn ascend<S: Scalar>(
    shape: &[usize],
    cfg: &DreamConfig,
    mut objective: impl FnMut(&mut Tape<S>, Var) -> Result<Var>,
) -> Result<Dream<S>> {
    cfg.validate()?;
    let mut x: Tensor<S> = Tensor::rand_uniform(shape.to_vec(), 0.4, 0.6, &mut RngStream::new(cfg.seed, NOISE_STREAM));
    let step = S::of(cfg.step_size);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut zero_run = 0;
    for i in 0..=cfg.steps {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.detached().with_requires_grad(true));
        let obj = objective(&mut tape, xv)?;
        let value = tape.value(obj).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("dream objective is {value} at step {i}")));
        }
        trace.push(value.f64());
        if i == cfg.steps {
            break;
        }
        tape.backward(obj)?;
        let g = tape.grad(xv).map(<[S]>::to_vec).unwrap_or_else(|| vec![S::zero(); x.len()]);
        if g.iter().all(|v| v.is_zero()) {
            zero_run += 1;
            if zero_run >= STALL_STEPS {
                return Ok(Dream { image: x, trace, status: DreamStatus::Stalled { step: i + 1 } });
            }
            continue;
        }
        zero_run = 0;
        let scale = if cfg.normalize_grad {
            step / (g.iter().map(|v| *v * *v).sum::<S>().sqrt() + S::of(1e-8))
        } else {
            step
        };
        for (p, g) in x.data_mut().iter_mut().zip(&g) {
            *p = (*p + scale * *g).max(S::zero()).min(S::one());
        }
    }
    Ok(Dream { image: x, trace, status: DreamStatus::Completed })
}

/// Maximizes the mean of one channel (last axis) of a layer's output, with
/// the model in evaluation mode.
pub fn activation_maximize<S: Scalar>(model: &BuiltModel<S>, cfg: &DreamConfig) -> Result<Dream<S>> {
    let layer = model.layer(&cfg.layer).ok_or_else(|| Error::Lookup { kind: "layer", key: cfg.layer.clone() })?;
    let channels = *layer.out_shape.last().unwrap_or(&0);
    if cfg.channel >= channels {
        return Err(Error::config(format!(
            "channel {} out of range for layer `{}` with {channels} channels",
            cfg.channel, cfg.layer
        )));
    }
    let axis = layer.out_shape.len() - 1;
    ascend(&model.input_shape, cfg, |tape, x| {
        let w = model.bind(tape, false);
        let f = model.forward(tape, &w, x, Mode::Eval, &mut RngStream::new(cfg.seed, 0))?;
        let tap = f.tap(&cfg.layer).expect("layer checked above");
        let ch = tape.narrow(tap, axis, cfg.channel, 1)?;
        Ok(tape.mean(ch))
    })
}
