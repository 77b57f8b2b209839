//! Mini-batch training on wing loss, evaluation, and the run log.

use std::fmt::Write as _;
use std::path::Path;

use crate::autograd::Tape;
use crate::config::Config;
use crate::data::{normalized_points, Dataset};
use crate::error::{Error, Result};
use crate::loss::{MetricsReport, WING_CURVATURE, WING_WIDTH};
use crate::model::BuiltModel;
use crate::nn::Mode;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Validation metrics are computed every `eval_every` epochs and after
    /// the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn config_keys() -> Vec<&'static str> {
        vec![
            "train.epochs",
            "train.batch_size",
            "train.learning_rate",
            "train.beta1",
            "train.beta2",
            "train.eps",
            "train.eval_every",
        ]
    }

    /// A learning rate of exactly 0 is accepted: it turns training into a
    /// pure evaluation sweep.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("train.learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::config("train.beta1 and train.beta2 must lie in [0, 1) and train.eps be > 0"));
        }
        Ok(())
    }

    pub fn to_config(&self, cfg: &mut Config) {
        cfg.set("train.epochs", self.epochs);
        cfg.set("train.batch_size", self.batch_size);
        cfg.set("train.learning_rate", self.learning_rate);
        cfg.set("train.beta1", self.beta1);
        cfg.set("train.beta2", self.beta2);
        cfg.set("train.eps", self.eps);
        cfg.set("train.eval_every", self.eval_every);
    }

    /// Reads `train.*`; the seed is supplied separately.
    pub fn from_config(cfg: &Config, seed: u64) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            epochs: cfg.get_or("train.epochs", d.epochs)?,
            batch_size: cfg.get_or("train.batch_size", d.batch_size)?,
            learning_rate: cfg.get_or("train.learning_rate", d.learning_rate)?,
            beta1: cfg.get_or("train.beta1", d.beta1)?,
            beta2: cfg.get_or("train.beta2", d.beta2)?,
            eps: cfg.get_or("train.eps", d.eps)?,
            eval_every: cfg.get_or("train.eval_every", d.eval_every)?,
            seed,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    t: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: S::of(cfg.learning_rate),
            beta1: S::of(cfg.beta1),
            beta2: S::of(cfg.beta2),
            eps: S::of(cfg.eps),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Tensor<S>>, grads: &[Vec<S>]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![S::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = S::one() - self.beta1.powi(self.t);
        let c2 = S::one() - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (S::one() - self.beta1) * g;
                *v = self.beta2 * *v + (S::one() - self.beta2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample wing loss over the epoch's batches.
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub const HEADER: &'static str = "epoch\ttrain_wing_loss\taccuracy\twing_loss\tmae\tmse\tn_samples";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            match &r.val {
                Some(m) => writeln!(s, "{}\t{}\t{}", r.epoch, r.train_loss, m),
                None => writeln!(s, "{}\t{}\t\t\t\t\t", r.epoch, r.train_loss),
            }
            .unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStatus {
    Completed,
    /// The epoch callback asked to stop after this epoch.
    Stopped { epoch: usize },
    /// A non-finite loss or gradient appeared; the model holds the last
    /// finite weights.
    Diverged { epoch: usize },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S = f64> {
    pub model: BuiltModel<S>,
    pub log: RunLog,
    pub status: TrainStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

fn check_data<S: Scalar>(model: &BuiltModel<S>, d: &Dataset, what: &str) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Contract(format!("{what} dataset is empty")));
    }
    if d.input_shape()[..] != model.input_shape[..] {
        return Err(Error::Dimension(format!(
            "{what} images are {:?}, model expects {:?}",
            d.input_shape(),
            model.input_shape
        )));
    }
    if d.samples.iter().any(|s| s.points.len() != model.spec.n_points) {
        return Err(Error::Dimension(format!("{what} samples must have {} points", model.spec.n_points)));
    }
    Ok(())
}

/// Loss and gradients of one sample, scaled by `scale`.
fn sample_grads<S: Scalar>(
    model: &BuiltModel<S>,
    image: &Tensor<S>,
    target: &Tensor<S>,
    scale: S,
    rng: &mut RngStream,
) -> Result<(f64, Vec<Vec<S>>)> {
    let mut tape = Tape::new();
    let w = model.bind(&mut tape, true);
    let x = tape.constant(image.detached());
    let f = model.forward(&mut tape, &w, x, Mode::Train, rng)?;
    let n = model.spec.n_points;
    let pred = tape.reshape(f.output, &[1, 2, n])?;
    let t = tape.constant(target.reshaped(vec![1, 2, n])?);
    let loss = tape.wing_loss(pred, t, S::of(WING_WIDTH), S::of(WING_CURVATURE))?;
    let value = tape.value(loss).item()?.f64();
    let scaled = tape.scale(loss, scale);
    tape.backward(scaled)?;
    Ok((value, model.grads(&tape, &w)))
}

/// [`train_with`] without an epoch callback.
pub fn train<S: Scalar>(model: BuiltModel<S>, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    train_with(model, train, val, cfg, |_, _| Control::Continue)
}

/// Adam on the batch-mean wing loss. Batches follow a seeded shuffle per
/// epoch; `on_epoch` sees each record with the current weights and may stop
/// the run.
pub fn train_with<S: Scalar>(
    mut model: BuiltModel<S>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &BuiltModel<S>) -> Control,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    check_data(&model, train, "training")?;
    check_data(&model, val, "validation")?;
    let images: Vec<Tensor<S>> = train.samples.iter().map(|s| s.image.cast()).collect();
    let targets: Vec<Tensor<S>> =
        train.samples.iter().map(|s| normalized_points(&s.points, train.dims).cast()).collect();
    let mut shuffle = RngStream::new(cfg.seed, SHUFFLE_STREAM);
    let mut dropout = RngStream::new(cfg.seed, DROPOUT_STREAM);
    let mut adam = Adam::new(cfg);
    let mut log = RunLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = S::one() / S::of(batch.len() as f64);
            let mut acc: Option<Vec<Vec<S>>> = None;
            let mut finite = true;
            for &i in batch {
                let (loss, g) = sample_grads(&model, &images[i], &targets[i], scale, &mut dropout)?;
                finite &= loss.is_finite() && g.iter().flatten().all(|v| v.is_finite());
                total += loss;
                match &mut acc {
                    None => acc = Some(g),
                    Some(a) => {
                        for (a, g) in a.iter_mut().zip(&g) {
                            for (a, g) in a.iter_mut().zip(g) {
                                *a += *g;
                            }
                        }
                    }
                }
            }
            if !finite {
                return Ok(TrainOutcome { model, log, status: TrainStatus::Diverged { epoch } });
            }
            adam.step(model.params_mut(), &acc.expect("nonempty batch"));
        }
        let val_report = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(evaluate(&model, val)?)
        } else {
            None
        };
        let record = EpochRecord { epoch, train_loss: total / train.len() as f64, val: val_report };
        let control = on_epoch(&record, &model);
        log.records.push(record);
        if control == Control::Stop {
            return Ok(TrainOutcome { model, log, status: TrainStatus::Stopped { epoch } });
        }
    }
    Ok(TrainOutcome { model, log, status: TrainStatus::Completed })
}

/// Eval-mode `[B, 2, N]` predictions in normalized coordinates.
pub fn predict_all<S: Scalar>(model: &BuiltModel<S>, d: &Dataset) -> Result<Tensor<f64>> {
    let mut out = Vec::with_capacity(d.len() * 2 * model.spec.n_points);
    for s in &d.samples {
        out.extend(model.predict(&s.image.cast())?.to_f64_vec());
    }
    Tensor::new(vec![d.len(), 2, model.spec.n_points], out)
}

/// All four metrics from one eval-mode pass over `d`.
pub fn evaluate<S: Scalar>(model: &BuiltModel<S>, d: &Dataset) -> Result<MetricsReport> {
    check_data(model, d, "evaluation")?;
    let pred = predict_all(model, d)?;
    let mut t = Vec::with_capacity(pred.len());
    for s in &d.samples {
        t.extend(normalized_points(&s.points, d.dims).into_data());
    }
    let target = Tensor::new(pred.shape().to_vec(), t)?;
    MetricsReport::compute(&pred, &target, d.dims)
}

pub fn save_checkpoint<S: Scalar>(model: &BuiltModel<S>, dir: &Path) -> Result<()> {
    model.save(dir)
}

pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<BuiltModel<S>> {
    BuiltModel::load(dir)
}
