//! Hyperparameter search: a univariate Tree-structured Parzen Estimator
//! sampler with asynchronous successive-halving pruning.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use statrs::function::erf::{erf, erf_inv};

use crate::config::Config;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{build_ensemble, BuiltModel, ModelSpec};
use crate::rng::RngStream;
use crate::training::{train_with, Control, TrainConfig, TrainStatus};

pub const STUDY_FILE: &str = "study.tsv";
pub const TRIALS_FILE: &str = "trials.tsv";

/// One search dimension.
#[derive(Clone, Debug, PartialEq)]
pub enum Dim {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Int { lo: i64, hi: i64 },
    Categorical(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(i64),
    Choice(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Float(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Choice(v) => f.write_str(v),
        }
    }
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            Value::Choice(_) => None,
        }
    }
}

impl Dim {
    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Dim::Uniform { lo, hi } => lo < hi,
            Dim::LogUniform { lo, hi } => *lo > 0.0 && lo < hi,
            Dim::Int { lo, hi } => lo < hi,
            Dim::Categorical(c) => !c.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("search dimension `{name}` has an empty or inverted range: {self}")))
        }
    }

    /// Continuous working range: log scale for log-uniform, half-unit
    /// padding for integers.
    fn bounds(&self) -> (f64, f64) {
        match self {
            Dim::Uniform { lo, hi } => (*lo, *hi),
            Dim::LogUniform { lo, hi } => (lo.ln(), hi.ln()),
            Dim::Int { lo, hi } => (*lo as f64 - 0.5, *hi as f64 + 0.5),
            Dim::Categorical(_) => unreachable!("categorical has no bounds"),
        }
    }

    fn to_internal(&self, v: &Value) -> Option<f64> {
        match (self, v) {
            (Dim::LogUniform { .. }, Value::Float(x)) => Some(x.ln()),
            (Dim::Uniform { .. }, Value::Float(x)) => Some(*x),
            (Dim::Int { .. }, Value::Int(i)) => Some(*i as f64),
            _ => None,
        }
    }

    fn value_at(&self, x: f64) -> Value {
        match self {
            Dim::Uniform { lo, hi } => Value::Float(x.clamp(*lo, *hi)),
            Dim::LogUniform { lo, hi } => Value::Float(x.exp().clamp(*lo, *hi)),
            Dim::Int { lo, hi } => Value::Int((x.round() as i64).clamp(*lo, *hi)),
            Dim::Categorical(c) => Value::Choice(c[x as usize].clone()),
        }
    }

    pub fn prior_sample(&self, rng: &mut RngStream) -> Value {
        match self {
            Dim::Categorical(c) => Value::Choice(c[rng.below(c.len())].clone()),
            Dim::Int { lo, hi } => Value::Int(lo + rng.below((hi - lo + 1) as usize) as i64),
            d => {
                let (lo, hi) = d.bounds();
                d.value_at(rng.uniform_in(lo, hi))
            }
        }
    }

    /// Parses a value written by `Display`.
    pub fn parse_value(&self, s: &str) -> Result<Value> {
        let bad = || Error::config(format!("value `{s}` does not fit dimension {self}"));
        match self {
            Dim::Uniform { .. } | Dim::LogUniform { .. } => s.parse().map(Value::Float).map_err(|_| bad()),
            Dim::Int { .. } => s.parse().map(Value::Int).map_err(|_| bad()),
            Dim::Categorical(c) => c.iter().find(|c| *c == s).map(|c| Value::Choice(c.clone())).ok_or_else(bad),
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            Dim::LogUniform { lo, hi } => write!(f, "log:{lo}:{hi}"),
            Dim::Int { lo, hi } => write!(f, "int:{lo}:{hi}"),
            Dim::Categorical(c) => write!(f, "choice:{}", c.join(",")),
        }
    }
}

impl FromStr for Dim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("malformed search dimension `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let pair = |rest: &str| -> Result<(f64, f64)> {
            let (a, b) = rest.split_once(':').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        match kind {
            "uniform" => pair(rest).map(|(lo, hi)| Dim::Uniform { lo, hi }),
            "log" => pair(rest).map(|(lo, hi)| Dim::LogUniform { lo, hi }),
            "int" => {
                let (a, b) = rest.split_once(':').ok_or_else(bad)?;
                Ok(Dim::Int { lo: a.parse().map_err(|_| bad())?, hi: b.parse().map_err(|_| bad())? })
            }
            "choice" => Ok(Dim::Categorical(rest.split(',').map(|c| c.trim().to_string()).collect())),
            _ => Err(bad()),
        }
    }
}

pub type Params = Vec<(String, Value)>;

/// Named dimensions; names are config keys the values are written to.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub dims: Vec<(String, Dim)>,
}

const SEARCH_PREFIX: &str = "search.";

impl SearchSpace {
    pub fn new(dims: Vec<(String, Dim)>) -> Result<Self> {
        for (i, (name, d)) in dims.iter().enumerate() {
            d.validate(name)?;
            if dims[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::config(format!("search dimension `{name}` repeated")));
            }
        }
        Ok(Self { dims })
    }

    /// Depths, kernel, widths, cardinality, heads, patch, dropout and
    /// learning rate.
    pub fn default_space() -> Self {
        let choice = |v: &[&str]| Dim::Categorical(v.iter().map(|s| s.to_string()).collect());
        Self::new(vec![
            ("model.stem_depth".into(), Dim::Int { lo: 1, hi: 4 }),
            ("model.branch_depth".into(), Dim::Int { lo: 1, hi: 3 }),
            ("model.kernel".into(), choice(&["3", "5"])),
            ("model.stem_width".into(), choice(&["8", "16", "32"])),
            ("model.cardinality".into(), choice(&["1", "2", "4"])),
            ("model.heads".into(), choice(&["1", "2", "4"])),
            ("model.patch".into(), choice(&["2", "4"])),
            ("model.dropout".into(), Dim::Uniform { lo: 0.0, hi: 0.5 }),
            ("train.learning_rate".into(), Dim::LogUniform { lo: 1e-4, hi: 1e-2 }),
        ])
        .expect("valid default space")
    }

    /// `search.<key>=<dim>` entries; the default space when there are none.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let dims: Vec<(String, Dim)> = cfg
            .section(SEARCH_PREFIX)
            .map(|(k, v)| {
                v.parse::<Dim>()
                    .map(|d| (k[SEARCH_PREFIX.len()..].to_string(), d))
                    .map_err(|e| Error::config(format!("`{k}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if dims.is_empty() {
            Ok(Self::default_space())
        } else {
            Self::new(dims)
        }
    }

    pub fn to_config(&self, cfg: &mut Config) {
        for (name, d) in &self.dims {
            cfg.set(&format!("{SEARCH_PREFIX}{name}"), d);
        }
    }

    pub fn dim(&self, name: &str) -> Option<&Dim> {
        self.dims.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialStatus {
    Running,
    Pruned,
    Complete,
    Failed,
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialStatus::Running => "running",
            TrialStatus::Pruned => "pruned",
            TrialStatus::Complete => "complete",
            TrialStatus::Failed => "failed",
        })
    }
}

impl FromStr for TrialStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "running" => Ok(TrialStatus::Running),
            "pruned" => Ok(TrialStatus::Pruned),
            "complete" => Ok(TrialStatus::Complete),
            "failed" => Ok(TrialStatus::Failed),
            _ => Err(Error::Lookup { kind: "trial status", key: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub params: Params,
    /// Objective after each epoch, starting at epoch 1.
    pub history: Vec<f64>,
    pub status: TrialStatus,
}

impl Trial {
    /// Final objective: the last report for complete trials, infinity for
    /// failed ones.
    pub fn objective(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Complete => self.history.last().copied(),
            TrialStatus::Failed => Some(f64::INFINITY),
            _ => None,
        }
    }

    pub fn param(&self, name: &str) -> Option<&Value> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpeConfig {
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    pub prior_weight: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self { n_startup: 10, gamma: 0.25, n_candidates: 24, prior_weight: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AshaConfig {
    pub min_resource: usize,
    pub eta: usize,
}

impl Default for AshaConfig {
    fn default() -> Self {
        Self { min_resource: 2, eta: 3 }
    }
}

impl AshaConfig {
    /// Rung epochs `r * eta^k` strictly below `max_epochs`; a trial that
    /// reaches its final epoch has nothing left to prune.
    pub fn rungs(&self, max_epochs: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut r = self.min_resource.max(1);
        while r < max_epochs {
            out.push(r);
            r *= self.eta.max(2);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Study {
    pub space: SearchSpace,
    pub trials: Vec<Trial>,
    pub max_epochs: usize,
    pub tpe: TpeConfig,
    pub asha: AshaConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Prune,
}

impl Study {
    pub fn new(space: SearchSpace, max_epochs: usize) -> Self {
        Self { space, trials: Vec::new(), max_epochs, tpe: TpeConfig::default(), asha: AshaConfig::default() }
    }

    pub fn add_trial(&mut self, params: Params) -> usize {
        let id = self.trials.len();
        self.trials.push(Trial { id, params, history: Vec::new(), status: TrialStatus::Running });
        id
    }

    pub fn trial(&self, id: usize) -> Result<&Trial> {
        self.trials.get(id).ok_or_else(|| Error::Lookup { kind: "trial", key: id.to_string() })
    }

    fn trial_mut(&mut self, id: usize) -> Result<&mut Trial> {
        self.trials.get_mut(id).ok_or_else(|| Error::Lookup { kind: "trial", key: id.to_string() })
    }

    /// Appends the objective for the next epoch of a running trial.
    pub fn report(&mut self, id: usize, epoch: usize, value: f64) -> Result<()> {
        let max = self.max_epochs;
        let t = self.trial_mut(id)?;
        if t.status != TrialStatus::Running || epoch != t.history.len() + 1 || epoch > max {
            return Err(Error::Contract(format!(
                "trial {id} ({}) cannot report epoch {epoch} after {} reports",
                t.status,
                t.history.len()
            )));
        }
        t.history.push(value);
        Ok(())
    }

    pub fn finish(&mut self, id: usize, status: TrialStatus) -> Result<()> {
        self.trial_mut(id)?.status = status;
        Ok(())
    }

    /// Lowest final objective among complete trials; ties go to the lower id.
    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.status == TrialStatus::Complete)
            .min_by(|a, b| a.objective().unwrap().total_cmp(&b.objective().unwrap()).then(a.id.cmp(&b.id)))
    }

    /// Trials the sampler learns from: complete ones and failed ones
    /// (scored as infinity).
    fn finished(&self) -> Vec<(&Trial, f64)> {
        self.trials.iter().filter_map(|t| t.objective().map(|o| (t, o))).collect()
    }

    pub fn to_study_tsv(&self) -> String {
        let mut s = String::from("trial\tepoch\tvalue\n");
        for t in &self.trials {
            for (e, v) in t.history.iter().enumerate() {
                s.push_str(&format!("{}\t{}\t{}\n", t.id, e + 1, v));
            }
        }
        s
    }

    pub fn to_trials_tsv(&self) -> String {
        let mut s = String::from("trial\tstatus\tobjective");
        for (n, _) in &self.space.dims {
            s.push('\t');
            s.push_str(n);
        }
        s.push('\n');
        for t in &self.trials {
            let obj = t.objective().map(|o| o.to_string()).unwrap_or_default();
            s.push_str(&format!("{}\t{}\t{}", t.id, t.status, obj));
            for (n, _) in &self.space.dims {
                s.push('\t');
                s.push_str(&t.param(n).map(|v| v.to_string()).unwrap_or_default());
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [(STUDY_FILE, self.to_study_tsv()), (TRIALS_FILE, self.to_trials_tsv())] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }

    /// Restores a saved study. Trials that were still running are marked
    /// failed: their training state was not persisted.
    pub fn load(dir: &Path, space: SearchSpace, max_epochs: usize) -> Result<Self> {
        let mut study = Study::new(space, max_epochs);
        let trials_path = dir.join(TRIALS_FILE);
        let mut rd = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(&trials_path)
            .map_err(|e| Error::Load { location: trials_path.display().to_string(), message: e.to_string() })?;
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| Error::Load { location: trials_path.display().to_string(), message: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        let names: Vec<&str> = study.space.dims.iter().map(|(n, _)| n.as_str()).collect();
        if header.len() < 3 || header[3..] != names[..] {
            return Err(Error::Load {
                location: trials_path.display().to_string(),
                message: "search space differs from the saved study".into(),
            });
        }
        for (i, rec) in rd.records().enumerate() {
            let loc = format!("{} row {}", trials_path.display(), i + 1);
            let err = |m: String| Error::Load { location: loc.clone(), message: m };
            let rec = rec.map_err(|e| err(e.to_string()))?;
            let id: usize = rec[0].parse().map_err(|_| err("bad trial id".into()))?;
            if id != study.trials.len() {
                return Err(err(format!("trial ids must be consecutive, found {id}")));
            }
            let mut status: TrialStatus = rec[1].parse().map_err(|e: Error| err(e.to_string()))?;
            if status == TrialStatus::Running {
                status = TrialStatus::Failed;
            }
            let mut params = Vec::new();
            for (j, (n, d)) in study.space.dims.iter().enumerate() {
                params.push((n.clone(), d.parse_value(&rec[3 + j]).map_err(|e| err(e.to_string()))?));
            }
            study.trials.push(Trial { id, params, history: Vec::new(), status });
        }
        let study_path = dir.join(STUDY_FILE);
        let mut rd = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(&study_path)
            .map_err(|e| Error::Load { location: study_path.display().to_string(), message: e.to_string() })?;
        for (i, rec) in rd.records().enumerate() {
            let loc = format!("{} row {}", study_path.display(), i + 1);
            let err = |m: &str| Error::Load { location: loc.clone(), message: m.to_string() };
            let rec = rec.map_err(|e| err(&e.to_string()))?;
            let (id, epoch, v): (usize, usize, f64) = (
                rec[0].parse().map_err(|_| err("bad trial id"))?,
                rec[1].parse().map_err(|_| err("bad epoch"))?,
                rec[2].parse().map_err(|_| err("bad value"))?,
            );
            let t = study.trials.get_mut(id).ok_or_else(|| err("unknown trial"))?;
            if epoch != t.history.len() + 1 {
                return Err(err("epochs out of order"));
            }
            t.history.push(v);
        }
        Ok(study)
    }
}

/// Truncated-Gaussian mixture over `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parzen {
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

fn phi(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

impl Parzen {
    /// One kernel per observation plus a broad prior kernel at the centre.
    /// Each bandwidth is the larger gap to its sorted neighbours (range ends
    /// count as neighbours), clipped to `[range / min(100, n + 2), range]`.
    pub fn fit(obs: &[f64], lo: f64, hi: f64, prior_weight: f64) -> Self {
        let range = hi - lo;
        let prior_mu = 0.5 * (lo + hi);
        let mut mus: Vec<f64> = obs.to_vec();
        mus.push(prior_mu);
        let mut order: Vec<usize> = (0..mus.len()).collect();
        order.sort_by(|&a, &b| mus[a].total_cmp(&mus[b]));
        let floor = range / (100.0f64).min(mus.len() as f64 + 1.0);
        let mut sigmas = vec![0.0; mus.len()];
        for (k, &i) in order.iter().enumerate() {
            let left = if k == 0 { lo } else { mus[order[k - 1]] };
            let right = if k + 1 == order.len() { hi } else { mus[order[k + 1]] };
            sigmas[i] = (mus[i] - left).max(right - mus[i]).clamp(floor, range);
        }
        let prior = mus.len() - 1;
        sigmas[prior] = range;
        let mut weights = vec![1.0; mus.len()];
        weights[prior] = prior_weight;
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { mus, sigmas, weights, lo, hi }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&x) {
            return 0.0;
        }
        let mut p = 0.0;
        for ((&m, &s), &w) in self.mus.iter().zip(&self.sigmas).zip(&self.weights) {
            let z = phi((self.hi - m) / s) - phi((self.lo - m) / s);
            let g = (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            p += w * g / z.max(1e-300);
        }
        p
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let (m, s) = (self.mus[k], self.sigmas[k]);
        let (a, b) = (phi((self.lo - m) / s), phi((self.hi - m) / s));
        let q = a + rng.uniform() * (b - a);
        let x = m + s * SQRT_2 * erf_inv((2.0 * q - 1.0).clamp(-1.0 + 1e-16, 1.0 - 1e-16));
        if x.is_finite() { x.clamp(self.lo, self.hi) } else { m.clamp(self.lo, self.hi) }
    }
}

/// Smoothed frequencies `(count + w) / (n + K w)`.
pub fn categorical_probs(counts: &[usize], prior_weight: f64) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let denom = n as f64 + counts.len() as f64 * prior_weight;
    counts.iter().map(|&c| (c as f64 + prior_weight) / denom).collect()
}

/// One candidate drawn from the good-set model with its score
/// `ln l(x) - ln g(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub value: Value,
    pub score: f64,
}

/// Splits finished trials into the good set (the `max(1, ceil(gamma n))`
/// lowest objectives, ties to lower id) and the rest.
pub fn split_good<'a>(finished: &[(&'a Trial, f64)], gamma: f64) -> (Vec<&'a Trial>, Vec<&'a Trial>) {
    let mut sorted: Vec<_> = finished.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id)));
    let n_good = ((gamma * sorted.len() as f64).ceil() as usize).max(1).min(sorted.len());
    let good = sorted[..n_good].iter().map(|t| t.0).collect();
    let bad = sorted[n_good..].iter().map(|t| t.0).collect();
    (good, bad)
}

/// The candidates TPE considers for `name`, or `None` during startup.
pub fn tpe_candidates(study: &Study, name: &str, rng: &mut RngStream) -> Option<Vec<Candidate>> {
    let finished = study.finished();
    if finished.len() < study.tpe.n_startup {
        return None;
    }
    let dim = study.space.dim(name)?;
    let (good, bad) = split_good(&finished, study.tpe.gamma);
    let cfg = study.tpe;
    Some(match dim {
        Dim::Categorical(choices) => {
            let counts = |set: &[&Trial]| {
                let mut c = vec![0usize; choices.len()];
                for t in set {
                    if let Some(Value::Choice(v)) = t.param(name) {
                        if let Some(i) = choices.iter().position(|x| x == v) {
                            c[i] += 1;
                        }
                    }
                }
                c
            };
            let l = categorical_probs(&counts(&good), cfg.prior_weight);
            let g = categorical_probs(&counts(&bad), cfg.prior_weight);
            (0..cfg.n_candidates)
                .map(|_| {
                    let u = rng.uniform();
                    let mut acc = 0.0;
                    let mut k = l.len() - 1;
                    for (i, p) in l.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            k = i;
                            break;
                        }
                    }
                    Candidate { value: Value::Choice(choices[k].clone()), score: l[k].ln() - g[k].ln() }
                })
                .collect()
        }
        d => {
            let (lo, hi) = d.bounds();
            let obs = |set: &[&Trial]| -> Vec<f64> {
                set.iter().filter_map(|t| t.param(name).and_then(|v| d.to_internal(v))).collect()
            };
            let l = Parzen::fit(&obs(&good), lo, hi, cfg.prior_weight);
            let g = Parzen::fit(&obs(&bad), lo, hi, cfg.prior_weight);
            (0..cfg.n_candidates)
                .map(|_| {
                    let x = l.sample(rng);
                    let score = l.pdf(x).max(1e-300).ln() - g.pdf(x).max(1e-300).ln();
                    Candidate { value: d.value_at(x), score }
                })
                .collect()
        }
    })
}

/// Prior draws until `n_startup` trials have finished; afterwards, per
/// dimension, the highest-scoring of the candidates (first wins ties).
pub fn tpe_suggest(study: &Study, rng: &mut RngStream) -> Params {
    study
        .space
        .dims
        .iter()
        .map(|(name, dim)| {
            let value = match tpe_candidates(study, name, rng) {
                None => dim.prior_sample(rng),
                Some(cands) => {
                    let mut best = &cands[0];
                    for c in &cands[1..] {
                        if c.score > best.score {
                            best = c;
                        }
                    }
                    best.value.clone()
                }
            };
            (name.clone(), value)
        })
        .collect()
}

/// Successive-halving rule at rung epochs: with `k` trials having reported
/// at this epoch, continue iff the trial's 1-based rank (ties to lower id)
/// is at most `floor(k / eta)`. Other epochs always continue.
pub fn asha_decide(study: &Study, trial: usize, epoch: usize) -> Result<Decision> {
    let t = study.trial(trial)?;
    if epoch == 0 || t.history.len() < epoch {
        return Err(Error::Contract(format!("trial {trial} has no report at epoch {epoch}")));
    }
    if !study.asha.rungs(study.max_epochs).contains(&epoch) {
        return Ok(Decision::Continue);
    }
    let mine = (t.history[epoch - 1], trial);
    let at_rung: Vec<(f64, usize)> =
        study.trials.iter().filter(|o| o.history.len() >= epoch).map(|o| (o.history[epoch - 1], o.id)).collect();
    let rank = 1 + at_rung.iter().filter(|o| o.0.total_cmp(&mine.0).then(o.1.cmp(&mine.1)).is_lt()).count();
    let promoted = at_rung.len() / study.asha.eta;
    Ok(if rank <= promoted { Decision::Continue } else { Decision::Prune })
}

/// Budget and execution settings of a study.
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub budget: usize,
    pub epochs: usize,
    pub jobs: usize,
    pub seed: u64,
    /// Base run configuration the sampled values are written over.
    pub base: Config,
}

pub struct StudyOutcome {
    pub study: Study,
    /// Weights of the best complete trial.
    pub best_model: Option<BuiltModel>,
}

const TPE_STREAM: u64 = 0x0054_5045;
const INIT_STREAM: u64 = 0x494e_4954;

/// Model and training settings for one trial.
pub fn trial_setup(base: &Config, params: &Params, epochs: usize, seed: u64) -> Result<(ModelSpec, TrainConfig)> {
    let mut cfg = base.clone();
    for (k, v) in params {
        cfg.set(k, v);
    }
    let spec = ModelSpec::from_config(&cfg)?;
    let train = TrainConfig { epochs, eval_every: 1, ..TrainConfig::from_config(&cfg, seed)? };
    Ok((spec, train))
}

struct Shared {
    study: Study,
    best: Option<(f64, usize, BuiltModel)>,
}

/// Suggest, build, train with per-epoch pruning, record; until `budget`
/// trials exist. Trials already present in `out` are resumed from disk and
/// count toward the budget. The objective is validation wing loss.
pub fn run_study(
    space: &SearchSpace,
    cfg: &StudyConfig,
    train: &Dataset,
    val: &Dataset,
    out: Option<&Path>,
) -> Result<StudyOutcome> {
    if cfg.budget == 0 || cfg.epochs == 0 {
        return Err(Error::config("a study needs at least one trial and one epoch"));
    }
    let study = match out {
        Some(dir) if dir.join(TRIALS_FILE).exists() => Study::load(dir, space.clone(), cfg.epochs)?,
        _ => Study::new(space.clone(), cfg.epochs),
    };
    let shared = Mutex::new(Shared { study, best: None });
    let input = train.input_shape();
    let worker = || -> Result<()> {
        loop {
            let (id, params) = {
                let mut s = shared.lock().unwrap();
                if s.study.trials.len() >= cfg.budget {
                    return Ok(());
                }
                let id = s.study.trials.len();
                let mut rng = RngStream::new(cfg.seed, TPE_STREAM).fork(id as u64);
                let params = tpe_suggest(&s.study, &mut rng);
                s.study.add_trial(params.clone());
                (id, params)
            };
            let seed = cfg.seed.wrapping_add(id as u64);
            let built = trial_setup(&cfg.base, &params, cfg.epochs, seed).and_then(|(spec, tc)| {
                let model = build_ensemble(&spec, &input, &mut RngStream::new(seed, INIT_STREAM))?;
                Ok((model, tc))
            });
            let status = match built {
                Err(_) => TrialStatus::Failed,
                Ok((model, tc)) => {
                    let outcome = train_with(model, train, val, &tc, |rec, _| {
                        let v = rec.val.map(|m| m.wing_loss).unwrap_or(f64::INFINITY);
                        let mut s = shared.lock().unwrap();
                        if s.study.report(id, rec.epoch, v).is_err() {
                            return Control::Stop;
                        }
                        match asha_decide(&s.study, id, rec.epoch) {
                            Ok(Decision::Continue) => Control::Continue,
                            _ => Control::Stop,
                        }
                    });
                    match outcome {
                        Err(_) => TrialStatus::Failed,
                        Ok(o) => match o.status {
                            TrainStatus::Completed => {
                                let obj = *o.log.records.last().and_then(|r| r.val.as_ref()).map(|m| &m.wing_loss).unwrap_or(&f64::INFINITY);
                                let mut s = shared.lock().unwrap();
                                let better = match &s.best {
                                    None => true,
                                    Some((b, bid, _)) => obj < *b || (obj == *b && id < *bid),
                                };
                                if better && obj.is_finite() {
                                    s.best = Some((obj, id, o.model));
                                }
                                TrialStatus::Complete
                            }
                            TrainStatus::Stopped { .. } => TrialStatus::Pruned,
                            TrainStatus::Diverged { .. } => TrialStatus::Failed,
                        },
                    }
                }
            };
            let mut s = shared.lock().unwrap();
            s.study.finish(id, status)?;
            if let Some(dir) = out {
                s.study.save(dir)?;
            }
        }
    };
    let jobs = cfg.jobs.max(1);
    if jobs == 1 {
        worker()?;
    } else {
        let results: Vec<Result<()>> = std::thread::scope(|sc| {
            let handles: Vec<_> = (0..jobs).map(|_| sc.spawn(worker)).collect();
            handles.into_iter().map(|h| h.join().expect("study worker panicked")).collect()
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
    }
    let Shared { study, best } = shared.into_inner().unwrap();
    if let Some(dir) = out {
        study.save(dir)?;
    }
    let best_model = match (best, study.best()) {
        (Some((_, id, m)), Some(b)) if b.id == id => Some(m),
        _ => None,
    };
    Ok(StudyOutcome { study, best_model })
}
