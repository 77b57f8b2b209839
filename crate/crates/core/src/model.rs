//! Root / stem / branch / head model assembly, the 20-model catalog, and
//! stacked ensembles.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::checkpoint::{read_tensors, write_tensors};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::kernels::Padding;
use crate::nn::{Layer, LayerKind, Mode};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// File next to the tensors describing how to rebuild the model.
pub const MODEL_FILE: &str = "model.cfg";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stem {
    Conv,
    ResNeXt,
    AltConvLuong,
    AltConvBahdanau,
    AltConvResNeXt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    None,
    Luong,
    Bahdanau,
    VisionTransformer,
}

const STEMS: [(Stem, &str, char); 5] = [
    (Stem::Conv, "conv", 'C'),
    (Stem::ResNeXt, "resnext", 'R'),
    (Stem::AltConvLuong, "alt_conv_luong", 'L'),
    (Stem::AltConvBahdanau, "alt_conv_bahdanau", 'B'),
    (Stem::AltConvResNeXt, "alt_conv_resnext", 'A'),
];

const BRANCHES: [(Branch, &str, char); 4] = [
    (Branch::None, "none", '1'),
    (Branch::Luong, "luong", '2'),
    (Branch::Bahdanau, "bahdanau", '3'),
    (Branch::VisionTransformer, "vit", '4'),
];

impl Stem {
    pub fn as_str(self) -> &'static str {
        STEMS.iter().find(|s| s.0 == self).unwrap().1
    }

    fn partner(self) -> Option<LayerKind> {
        match self {
            Stem::AltConvLuong => Some(LayerKind::LuongAttention),
            Stem::AltConvBahdanau => Some(LayerKind::BahdanauAttention),
            _ => None,
        }
    }
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        BRANCHES.iter().find(|b| b.0 == self).unwrap().1
    }
}

impl fmt::Display for Stem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        STEMS
            .iter()
            .find(|e| e.1 == s)
            .map(|e| e.0)
            .ok_or_else(|| Error::Lookup { kind: "stem", key: s.to_string() })
    }
}

impl FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BRANCHES
            .iter()
            .find(|e| e.1 == s)
            .map(|e| e.0)
            .ok_or_else(|| Error::Lookup { kind: "branch", key: s.to_string() })
    }
}

/// Declarative model description.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub root_channels: (usize, usize),
    pub stem: Stem,
    pub stem_depth: usize,
    pub stem_width: usize,
    pub kernel: usize,
    pub cardinality: usize,
    pub branch: Branch,
    pub branch_depth: usize,
    pub heads: usize,
    pub patch: usize,
    pub model_dim: usize,
    pub dropout: f64,
    pub n_points: usize,
    pub ensemble_k: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            root_channels: (16, 64),
            stem: Stem::Conv,
            stem_depth: 3,
            stem_width: 64,
            kernel: 3,
            cardinality: 4,
            branch: Branch::None,
            branch_depth: 2,
            heads: 4,
            patch: 2,
            model_dim: 32,
            dropout: 0.1,
            n_points: 6,
            ensemble_k: 1,
        }
    }
}

/// Looks up a catalog entry such as `"A-3"`.
pub fn catalog(id: &str) -> Result<ModelSpec> {
    let lookup = || Error::Lookup { kind: "catalog id", key: id.to_string() };
    let mut chars = id.chars();
    let (Some(s), Some('-'), Some(b), None) = (chars.next(), chars.next(), chars.next(), chars.next())
    else {
        return Err(lookup());
    };
    let stem = STEMS.iter().find(|e| e.2 == s).ok_or_else(lookup)?.0;
    let branch = BRANCHES.iter().find(|e| e.2 == b).ok_or_else(lookup)?.0;
    Ok(ModelSpec { stem, branch, ..ModelSpec::default() })
}

/// All 20 catalog identifiers in table order.
pub fn catalog_ids() -> Vec<String> {
    STEMS
        .iter()
        .flat_map(|s| BRANCHES.iter().map(move |b| format!("{}-{}", s.2, b.2)))
        .collect()
}

const MODEL_KEYS: [&str; 14] = [
    "model.root_channels",
    "model.stem",
    "model.stem_depth",
    "model.stem_width",
    "model.kernel",
    "model.cardinality",
    "model.branch",
    "model.branch_depth",
    "model.heads",
    "model.patch",
    "model.model_dim",
    "model.dropout",
    "model.n_points",
    "model.ensemble",
];

impl ModelSpec {
    /// Desk-scale widths: the same grammar with narrower root, stem and
    /// transformer.
    pub fn scaled(self) -> Self {
        Self { root_channels: (8, 16), stem_width: 16, model_dim: 16, heads: 2, ..self }
    }

    /// Catalog identifier of the (stem, branch) pair.
    pub fn id(&self) -> String {
        let s = STEMS.iter().find(|e| e.0 == self.stem).unwrap().2;
        let b = BRANCHES.iter().find(|e| e.0 == self.branch).unwrap().2;
        format!("{s}-{b}")
    }

    pub fn is_alternating(&self) -> bool {
        matches!(self.stem, Stem::AltConvLuong | Stem::AltConvBahdanau | Stem::AltConvResNeXt)
    }

    /// Every key this spec reads from a config.
    pub fn config_keys() -> Vec<&'static str> {
        let mut k = MODEL_KEYS.to_vec();
        k.extend(["model.id", "model.scale"]);
        k
    }

    pub fn to_config(&self, cfg: &mut Config) {
        cfg.set("model.root_channels", format!("{},{}", self.root_channels.0, self.root_channels.1));
        cfg.set("model.stem", self.stem);
        cfg.set("model.stem_depth", self.stem_depth);
        cfg.set("model.stem_width", self.stem_width);
        cfg.set("model.kernel", self.kernel);
        cfg.set("model.cardinality", self.cardinality);
        cfg.set("model.branch", self.branch);
        cfg.set("model.branch_depth", self.branch_depth);
        cfg.set("model.heads", self.heads);
        cfg.set("model.patch", self.patch);
        cfg.set("model.model_dim", self.model_dim);
        cfg.set("model.dropout", self.dropout);
        cfg.set("model.n_points", self.n_points);
        cfg.set("model.ensemble", self.ensemble_k);
    }

    /// Reads `model.*` keys. `model.id` selects a catalog entry and
    /// `model.scale=desk` applies [`ModelSpec::scaled`]; explicit keys
    /// override both.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let mut spec = match cfg.raw("model.id") {
            Some(id) => catalog(id)?,
            None => ModelSpec::default(),
        };
        match cfg.raw("model.scale") {
            None | Some("full") => {}
            Some("desk") => spec = spec.scaled(),
            Some(other) => return Err(Error::config(format!("invalid value `{other}` for `model.scale`"))),
        }
        if let Some(rc) = cfg.raw("model.root_channels") {
            let parts: Vec<usize> = rc
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::config(format!("invalid value `{rc}` for `model.root_channels`")))?;
            let [a, b] = parts[..] else {
                return Err(Error::config(format!("invalid value `{rc}` for `model.root_channels`")));
            };
            spec.root_channels = (a, b);
        }
        let named = |key: &str, e: Error| match e {
            Error::Lookup { kind, key: v } => Error::config(format!("unknown {kind} `{v}` for `{key}`")),
            other => other,
        };
        if let Some(s) = cfg.raw("model.stem") {
            spec.stem = s.parse().map_err(|e| named("model.stem", e))?;
        }
        if let Some(b) = cfg.raw("model.branch") {
            spec.branch = b.parse().map_err(|e| named("model.branch", e))?;
        }
        spec.stem_depth = cfg.get_or("model.stem_depth", spec.stem_depth)?;
        spec.stem_width = cfg.get_or("model.stem_width", spec.stem_width)?;
        spec.kernel = cfg.get_or("model.kernel", spec.kernel)?;
        spec.cardinality = cfg.get_or("model.cardinality", spec.cardinality)?;
        spec.branch_depth = cfg.get_or("model.branch_depth", spec.branch_depth)?;
        spec.heads = cfg.get_or("model.heads", spec.heads)?;
        spec.patch = cfg.get_or("model.patch", spec.patch)?;
        spec.model_dim = cfg.get_or("model.model_dim", spec.model_dim)?;
        spec.dropout = cfg.get_or("model.dropout", spec.dropout)?;
        spec.n_points = cfg.get_or("model.n_points", spec.n_points)?;
        spec.ensemble_k = cfg.get_or("model.ensemble", spec.ensemble_k)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("root_channels", self.root_channels.0.min(self.root_channels.1)),
            ("stem_depth", self.stem_depth),
            ("stem_width", self.stem_width),
            ("kernel", self.kernel),
            ("cardinality", self.cardinality),
            ("heads", self.heads),
            ("patch", self.patch),
            ("model_dim", self.model_dim),
            ("n_points", self.n_points),
            ("ensemble", self.ensemble_k),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model.{k} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("model.dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn stem_kinds(&self) -> Vec<LayerKind> {
        let conv = LayerKind::Conv {
            kernel: self.kernel,
            filters: self.stem_width,
            stride: 1,
            padding: Padding::Same,
            relu: true,
        };
        let resnext = LayerKind::ResNeXt { cardinality: self.cardinality, kernel: self.kernel };
        let mut kinds = Vec::new();
        for _ in 0..self.stem_depth {
            match self.stem {
                Stem::Conv => kinds.push(conv.clone()),
                Stem::ResNeXt => kinds.push(resnext.clone()),
                Stem::AltConvResNeXt => kinds.extend([conv.clone(), resnext.clone()]),
                s => kinds.extend([conv.clone(), s.partner().unwrap()]),
            }
        }
        kinds
    }

    fn branch_kinds(&self) -> Vec<LayerKind> {
        let d = self.branch_depth;
        match self.branch {
            Branch::None => vec![],
            Branch::Luong => vec![LayerKind::LuongAttention; d],
            Branch::Bahdanau => vec![LayerKind::BahdanauAttention; d],
            Branch::VisionTransformer => {
                let mut v = vec![LayerKind::PatchEncoder { patch: self.patch, model_dim: self.model_dim }];
                v.extend(std::iter::repeat_n(LayerKind::Transformer { heads: self.heads }, d));
                v
            }
        }
    }
}

/// Removes the final stem block; for alternating stems the final
/// conv + partner pair.
pub fn ablate_last_block(spec: &ModelSpec) -> Result<ModelSpec> {
    if spec.stem_depth < 2 {
        return Err(Error::config(format!(
            "cannot ablate a stem of depth {}",
            spec.stem_depth
        )));
    }
    Ok(ModelSpec { stem_depth: spec.stem_depth - 1, ..spec.clone() })
}

/// A model ready to run: shared root, one or more stem+branch components,
/// and the head.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltModel<S = f64> {
    pub spec: ModelSpec,
    pub input_shape: Vec<usize>,
    pub root: Vec<Layer<S>>,
    pub components: Vec<Vec<Layer<S>>>,
    pub head: Vec<Layer<S>>,
}

/// Weight handles on one tape, one entry per layer in [`BuiltModel::layers`]
/// order.
#[derive(Clone, Debug)]
pub struct Binding(pub Vec<Vec<Var>>);

/// Result of a forward pass: the `[2, N]` output and every layer's output.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    pub taps: Vec<(String, Var)>,
}

impl Forward {
    pub fn tap(&self, layer: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == layer).map(|(_, v)| *v)
    }
}

fn push_layer<S: Scalar>(
    out: &mut Vec<Layer<S>>,
    name: String,
    kind: LayerKind,
    shape: &mut Vec<usize>,
    rng: &mut RngStream,
) -> Result<()> {
    let layer = Layer::new(name, kind, shape, rng)?;
    *shape = layer.out_shape.clone();
    out.push(layer);
    Ok(())
}

/// Builds a singular model (`ensemble_k` ignored).
pub fn build_model<S: Scalar>(spec: &ModelSpec, input_shape: &[usize], rng: &mut RngStream) -> Result<BuiltModel<S>> {
    assemble(spec, input_shape, 1, rng)
}

/// Builds `spec.ensemble_k` stem+branch components over one shared root
/// with a single head on their concatenated flattened outputs.
pub fn build_ensemble<S: Scalar>(spec: &ModelSpec, input_shape: &[usize], rng: &mut RngStream) -> Result<BuiltModel<S>> {
    assemble(spec, input_shape, spec.ensemble_k, rng)
}

fn assemble<S: Scalar>(spec: &ModelSpec, input_shape: &[usize], k: usize, rng: &mut RngStream) -> Result<BuiltModel<S>> {
    spec.validate()?;
    if input_shape.len() != 3 {
        return Err(Error::config(format!("model input must be HxWxC, got {}", shape_str(input_shape))));
    }
    let mut shape = input_shape.to_vec();
    let mut root = Vec::new();
    for (i, c) in [spec.root_channels.0, spec.root_channels.1].into_iter().enumerate() {
        let kind = LayerKind::Conv { kernel: 3, filters: c, stride: 2, padding: Padding::Same, relu: true };
        push_layer(&mut root, format!("root.{i}"), kind, &mut shape, rng)?;
    }
    let root_out = shape.clone();
    let mut components = Vec::with_capacity(k);
    let mut flat = 0;
    for j in 0..k {
        let prefix = if k > 1 { format!("c{j}.") } else { String::new() };
        let mut layers = Vec::new();
        let mut shape = root_out.clone();
        for (i, kind) in spec.stem_kinds().into_iter().enumerate() {
            push_layer(&mut layers, format!("{prefix}stem.{i}"), kind, &mut shape, rng)?;
        }
        for (i, kind) in spec.branch_kinds().into_iter().enumerate() {
            push_layer(&mut layers, format!("{prefix}branch.{i}"), kind, &mut shape, rng)?;
        }
        push_layer(&mut layers, format!("{prefix}flatten"), LayerKind::Flatten, &mut shape, rng)?;
        flat += shape[0];
        components.push(layers);
    }
    let mut head = Vec::new();
    let mut shape = vec![flat];
    push_layer(&mut head, "head.dropout".into(), LayerKind::Dropout { rate: spec.dropout }, &mut shape, rng)?;
    let dense = LayerKind::Dense { out: 2 * spec.n_points, relu: false };
    push_layer(&mut head, "head.dense".into(), dense, &mut shape, rng)?;
    Ok(BuiltModel { spec: spec.clone(), input_shape: input_shape.to_vec(), root, components, head })
}

impl<S: Scalar> BuiltModel<S> {
    pub fn output_shape(&self) -> [usize; 2] {
        [2, self.spec.n_points]
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<S>> {
        self.root.iter().chain(self.components.iter().flatten()).chain(self.head.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<S>> {
        self.root
            .iter_mut()
            .chain(self.components.iter_mut().flatten())
            .chain(self.head.iter_mut())
    }

    pub fn layer(&self, name: &str) -> Option<&Layer<S>> {
        self.layers().find(|l| l.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    /// `(qualified name, tensor)` for every weight, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        self.layers()
            .flat_map(|l| l.params.iter().map(move |p| (format!("{}.{}", l.name, p.name), &p.value)))
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.layers_mut().flat_map(|l| l.params.iter_mut().map(|p| &mut p.value))
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Binding {
        Binding(self.layers().map(|l| l.bind(tape, trainable)).collect())
    }

    /// Runs the model on `x` (shape `input_shape`).
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        w: &Binding,
        x: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Forward> {
        let mut taps = Vec::new();
        let mut idx = 0;
        let mut run = |layers: &[Layer<S>], mut h: Var, tape: &mut Tape<S>, taps: &mut Vec<(String, Var)>, rng: &mut RngStream| {
            for l in layers {
                h = l.forward(tape, &w.0[idx], h, mode, rng)?;
                taps.push((l.name.clone(), h));
                idx += 1;
            }
            Ok::<Var, Error>(h)
        };
        let r = run(&self.root, x, tape, &mut taps, rng)?;
        let mut outs = Vec::with_capacity(self.components.len());
        for c in &self.components {
            outs.push(run(c, r, tape, &mut taps, rng)?);
        }
        let feat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 0)? };
        let y = run(&self.head, feat, tape, &mut taps, rng)?;
        let output = tape.reshape(y, &self.output_shape())?;
        Ok(Forward { output, taps })
    }

    /// Eval-mode prediction for one image.
    pub fn predict(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape, false);
        let x = tape.constant(image.detached());
        let f = self.forward(&mut tape, &w, x, Mode::Eval, &mut RngStream::new(0, 0))?;
        Ok(tape.value(f.output).clone())
    }

    /// Gradients of every weight after `tape.backward`, in binding order.
    pub fn grads(&self, tape: &Tape<S>, w: &Binding) -> Vec<Vec<S>> {
        self.layers()
            .zip(&w.0)
            .flat_map(|(l, vars)| {
                l.params.iter().zip(vars).map(|(p, &v)| {
                    tape.grad(v).map(<[S]>::to_vec).unwrap_or_else(|| vec![S::zero(); p.value.len()])
                })
            })
            .collect()
    }

    /// Writes the weights plus a description sufficient to rebuild.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_tensors(dir, &self.named_params())?;
        let mut cfg = Config::new();
        self.spec.to_config(&mut cfg);
        cfg.set("model.input", shape_str(&self.input_shape));
        cfg.save(&dir.join(MODEL_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let mut cfg = Config::load(&path)?;
        let dims = cfg
            .remove("model.input")
            .ok_or_else(|| Error::CorruptCheckpoint(format!("{} lacks model.input", path.display())))?;
        let input: Vec<usize> = dims
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::CorruptCheckpoint(format!("bad model.input `{dims}`")))?;
        let spec = ModelSpec::from_config(&cfg)?;
        let mut model: Self = build_ensemble(&spec, &input, &mut RngStream::new(0, 0))?;
        let mut stored: std::collections::HashMap<String, Tensor<S>> = read_tensors(dir)?.into_iter().collect();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t = stored
                .remove(name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{name}` is {}, model expects {}",
                    shape_str(t.shape()),
                    shape_str(slot.shape())
                )));
            }
            *slot = t.with_requires_grad(true);
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::CorruptCheckpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(model)
    }
}
