//! Network building blocks.
//!
//! A [`Layer`] owns its named weights and a [`LayerKind`] describing its
//! hyperparameters. Weight shapes are a pure function of the kind and the
//! input shape, fixed when the layer is constructed.

mod attention;
mod conv;
mod dense;

pub use attention::{
    bahdanau_channel_attention, luong_channel_attention, multi_head_attention, patch_encode,
    transformer_block, MhaWeights, TransformerWeights,
};
pub use conv::{conv_layer, resnext_block, ResnextPath};
pub use dense::{dense, dropout};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{ConvGeom, Padding};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{numel, shape_str, Tensor};

/// Training activates dropout; evaluation is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Transformer feed-forward expansion factor.
pub const FFN_EXPANSION: usize = 4;
/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv { kernel: usize, filters: usize, stride: usize, padding: Padding, relu: bool },
    ResNeXt { cardinality: usize, kernel: usize },
    LuongAttention,
    BahdanauAttention,
    PatchEncoder { patch: usize, model_dim: usize },
    Transformer { heads: usize },
    Flatten,
    Dropout { rate: f64 },
    Dense { out: usize, relu: bool },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::ResNeXt { .. } => "resnext",
            LayerKind::LuongAttention => "luong",
            LayerKind::BahdanauAttention => "bahdanau",
            LayerKind::PatchEncoder { .. } => "patch_encoder",
            LayerKind::Transformer { .. } => "transformer",
            LayerKind::Flatten => "flatten",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Dense { .. } => "dense",
        }
    }

    /// Hyperparameters as key/value pairs.
    pub fn hyper(&self) -> Vec<(&'static str, String)> {
        match self {
            LayerKind::Conv { kernel, filters, stride, padding, relu } => vec![
                ("kernel", kernel.to_string()),
                ("filters", filters.to_string()),
                ("stride", stride.to_string()),
                ("padding", padding.as_str().to_string()),
                ("relu", relu.to_string()),
            ],
            LayerKind::ResNeXt { cardinality, kernel } => {
                vec![("cardinality", cardinality.to_string()), ("kernel", kernel.to_string())]
            }
            LayerKind::PatchEncoder { patch, model_dim } => {
                vec![("patch", patch.to_string()), ("model_dim", model_dim.to_string())]
            }
            LayerKind::Transformer { heads } => vec![("heads", heads.to_string())],
            LayerKind::Dropout { rate } => vec![("rate", rate.to_string())],
            LayerKind::Dense { out, relu } => {
                vec![("out", out.to_string()), ("relu", relu.to_string())]
            }
            LayerKind::LuongAttention | LayerKind::BahdanauAttention | LayerKind::Flatten => {
                vec![]
            }
        }
    }

    /// Output shape, or a configuration error when the input cannot feed
    /// this layer.
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let need_rank = |r: usize| -> Result<()> {
            if input.len() != r {
                return Err(Error::config(format!(
                    "{} expects a rank-{r} input, got {}",
                    self.name(),
                    shape_str(input)
                )));
            }
            Ok(())
        };
        match self {
            LayerKind::Conv { kernel, filters, stride, padding, .. } => {
                need_rank(3)?;
                let g = ConvGeom::new(
                    input,
                    &[*kernel, *kernel, input[2], *filters],
                    (*stride, *stride),
                    *padding,
                    1,
                )?;
                Ok(g.out_shape())
            }
            LayerKind::ResNeXt { cardinality, .. } => {
                need_rank(3)?;
                if *cardinality == 0 || !input[2].is_multiple_of(*cardinality) {
                    return Err(Error::config(format!(
                        "resnext cardinality {cardinality} does not divide {} channels",
                        input[2]
                    )));
                }
                Ok(input.to_vec())
            }
            LayerKind::LuongAttention | LayerKind::BahdanauAttention => {
                if input.is_empty() {
                    return Err(Error::config("channel attention needs a channel axis"));
                }
                Ok(input.to_vec())
            }
            LayerKind::PatchEncoder { patch, model_dim } => {
                need_rank(3)?;
                let p = *patch;
                if p == 0 || !input[0].is_multiple_of(p) || !input[1].is_multiple_of(p) {
                    return Err(Error::config(format!(
                        "patch size {p} does not divide spatial extent {}x{}",
                        input[0], input[1]
                    )));
                }
                if *model_dim == 0 {
                    return Err(Error::config("patch encoder model_dim must be positive"));
                }
                Ok(vec![input[0] * input[1] / (p * p), *model_dim])
            }
            LayerKind::Transformer { heads } => {
                need_rank(2)?;
                if *heads == 0 || !input[1].is_multiple_of(*heads) {
                    return Err(Error::config(format!(
                        "model dim {} not divisible by {heads} heads",
                        input[1]
                    )));
                }
                Ok(input.to_vec())
            }
            LayerKind::Flatten => Ok(vec![numel(input)]),
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerKind::Dense { out, .. } => {
                need_rank(1)?;
                Ok(vec![*out])
            }
        }
    }

    /// Trainable parameter shapes for the given input shape, in layer order.
    pub fn param_shapes(&self, input: &[usize]) -> Result<Vec<(String, Vec<usize>)>> {
        self.out_shape(input)?;
        let s = |n: &str, d: Vec<usize>| (n.to_string(), d);
        Ok(match self {
            LayerKind::Conv { kernel, filters, .. } => vec![
                s("kernel", vec![*kernel, *kernel, input[2], *filters]),
                s("bias", vec![*filters]),
            ],
            LayerKind::ResNeXt { cardinality, kernel } => {
                let w = input[2] / cardinality;
                (0..*cardinality)
                    .flat_map(|i| {
                        [
                            (format!("path{i}.reduce.kernel"), vec![1, 1, input[2], w]),
                            (format!("path{i}.reduce.bias"), vec![w]),
                            (format!("path{i}.conv.kernel"), vec![*kernel, *kernel, w, w]),
                            (format!("path{i}.conv.bias"), vec![w]),
                        ]
                    })
                    .collect()
            }
            LayerKind::PatchEncoder { patch, model_dim } => {
                let tokens = input[0] * input[1] / (patch * patch);
                vec![
                    s("proj", vec![patch * patch * input[2], *model_dim]),
                    s("pos", vec![tokens, *model_dim]),
                ]
            }
            LayerKind::Transformer { .. } => {
                let d = input[1];
                let f = FFN_EXPANSION * d;
                vec![
                    s("ln1.gain", vec![d]),
                    s("ln1.bias", vec![d]),
                    s("attn.wq", vec![d, d]),
                    s("attn.bq", vec![d]),
                    s("attn.wk", vec![d, d]),
                    s("attn.bk", vec![d]),
                    s("attn.wv", vec![d, d]),
                    s("attn.bv", vec![d]),
                    s("attn.wo", vec![d, d]),
                    s("attn.bo", vec![d]),
                    s("ln2.gain", vec![d]),
                    s("ln2.bias", vec![d]),
                    s("ffn.w1", vec![d, f]),
                    s("ffn.b1", vec![f]),
                    s("ffn.w2", vec![f, d]),
                    s("ffn.b2", vec![d]),
                ]
            }
            LayerKind::Dense { out, .. } => {
                vec![s("weight", vec![input[0], *out]), s("bias", vec![*out])]
            }
            LayerKind::LuongAttention
            | LayerKind::BahdanauAttention
            | LayerKind::Flatten
            | LayerKind::Dropout { .. } => vec![],
        })
    }

    /// Closed-form trainable scalar count.
    pub fn param_count(&self, input: &[usize]) -> Result<usize> {
        self.out_shape(input)?;
        Ok(match self {
            LayerKind::Conv { kernel, filters, .. } => kernel * kernel * input[2] * filters + filters,
            LayerKind::ResNeXt { cardinality, kernel } => {
                let (d, c) = (input[2], *cardinality);
                let w = d / c;
                c * (d * w + w + kernel * kernel * w * w + w)
            }
            LayerKind::PatchEncoder { patch, model_dim } => {
                let tokens = input[0] * input[1] / (patch * patch);
                (patch * patch * input[2] + tokens) * model_dim
            }
            LayerKind::Transformer { .. } => {
                let d = input[1];
                let f = FFN_EXPANSION * d;
                4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d)
            }
            LayerKind::Dense { out, .. } => input[0] * out + out,
            _ => 0,
        })
    }
}

fn init_std(kind: &LayerKind, param: &str, input: &[usize]) -> Option<f64> {
    let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
    let lecun = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
    match kind {
        LayerKind::Conv { kernel, .. } if param == "kernel" => {
            Some(he(kernel * kernel * input[2]))
        }
        LayerKind::ResNeXt { cardinality, kernel } => {
            let w = input[2] / cardinality;
            if param.ends_with("reduce.kernel") {
                Some(he(input[2]))
            } else if param.ends_with("conv.kernel") {
                Some(lecun(kernel * kernel * w))
            } else {
                None
            }
        }
        LayerKind::PatchEncoder { patch, .. } => match param {
            "proj" => Some(lecun(patch * patch * input[2])),
            "pos" => Some(0.02),
            _ => None,
        },
        LayerKind::Transformer { .. } => {
            let d = input[1];
            match param {
                "attn.wq" | "attn.wk" | "attn.wv" | "attn.wo" => Some(lecun(d)),
                "ffn.w1" => Some(he(d)),
                "ffn.w2" => Some(lecun(FFN_EXPANSION * d)),
                _ => None,
            }
        }
        LayerKind::Dense { relu, .. } if param == "weight" => {
            Some(if *relu { he(input[0]) } else { lecun(input[0]) })
        }
        _ => None,
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S = f64> {
    pub name: String,
    pub value: Tensor<S>,
}

/// One layer: kind, shapes, and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S = f64> {
    pub name: String,
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub params: Vec<Param<S>>,
}

impl<S: Scalar> Layer<S> {
    /// Builds a layer with freshly initialized weights: fan-in scaled
    /// normal kernels, zero biases, unit layer-norm gains.
    pub fn new(
        name: impl Into<String>,
        kind: LayerKind,
        in_shape: &[usize],
        rng: &mut RngStream,
    ) -> Result<Self> {
        let name = name.into();
        let named = |e: Error| match e {
            Error::Config(m) | Error::Dimension(m) => Error::Config(format!("layer `{name}`: {m}")),
            other => other,
        };
        let out_shape = kind.out_shape(in_shape).map_err(named)?;
        let params = kind
            .param_shapes(in_shape)
            .map_err(named)?
            .into_iter()
            .map(|(pname, dims)| {
                let value = match init_std(&kind, &pname, in_shape) {
                    Some(std) => Tensor::randn(dims, std, rng),
                    None if pname.ends_with("gain") => Tensor::ones(dims),
                    None => Tensor::zeros(dims),
                };
                Param { name: pname, value: value.with_requires_grad(true) }
            })
            .collect();
        Ok(Self { name, kind, in_shape: in_shape.to_vec(), out_shape, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    /// Records the weights on `tape`; they receive gradients iff
    /// `trainable`.
    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.detached().with_requires_grad(true))
                } else {
                    tape.constant(p.value.detached())
                }
            })
            .collect()
    }

    /// Runs the layer on `x` using weights previously bound with [`bind`].
    ///
    /// [`bind`]: Layer::bind
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        w: &[Var],
        x: Var,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Var> {
        if tape.shape(x) != self.in_shape.as_slice() {
            return Err(Error::dim(format!(
                "layer `{}` built for {}, got {}",
                self.name,
                shape_str(&self.in_shape),
                shape_str(tape.shape(x))
            )));
        }
        match &self.kind {
            LayerKind::Conv { stride, padding, relu, .. } => {
                conv_layer(tape, x, w[0], w[1], *stride, *padding, *relu)
            }
            LayerKind::ResNeXt { .. } => {
                let paths: Vec<ResnextPath> = w
                    .chunks_exact(4)
                    .map(|c| ResnextPath {
                        reduce_kernel: c[0],
                        reduce_bias: c[1],
                        conv_kernel: c[2],
                        conv_bias: c[3],
                    })
                    .collect();
                resnext_block(tape, x, &paths)
            }
            LayerKind::LuongAttention => luong_channel_attention(tape, x),
            LayerKind::BahdanauAttention => bahdanau_channel_attention(tape, x),
            LayerKind::PatchEncoder { patch, .. } => patch_encode(tape, x, *patch, w[0], w[1]),
            LayerKind::Transformer { heads } => {
                let tw = TransformerWeights::from_slice(w);
                transformer_block(tape, x, &tw, *heads)
            }
            LayerKind::Flatten => tape.flatten(x),
            LayerKind::Dropout { rate } => dropout(tape, x, *rate, mode, rng),
            LayerKind::Dense { relu, .. } => dense(tape, x, w[0], w[1], *relu),
        }
    }
}

/// Runs `f` on a scratch tape and returns the resulting value.
pub fn eval_detached<S: Scalar>(
    inputs: &[&Tensor<S>],
    f: impl FnOnce(&mut Tape<S>, &[Var]) -> Result<Var>,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant((*t).clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_counts_match_shapes() {
        let mut rng = RngStream::new(0, 0);
        let cases: Vec<(LayerKind, Vec<usize>)> = vec![
            (LayerKind::Conv { kernel: 3, filters: 64, stride: 2, padding: Padding::Same, relu: true }, vec![8, 8, 3]),
            (LayerKind::ResNeXt { cardinality: 4, kernel: 3 }, vec![6, 8, 16]),
            (LayerKind::PatchEncoder { patch: 2, model_dim: 12 }, vec![6, 8, 5]),
            (LayerKind::Transformer { heads: 2 }, vec![5, 8]),
            (LayerKind::Dense { out: 12, relu: false }, vec![100]),
            (LayerKind::LuongAttention, vec![2, 2, 3]),
        ];
        for (kind, input) in cases {
            let layer = Layer::<f64>::new("l", kind.clone(), &input, &mut rng).unwrap();
            assert_eq!(layer.param_count(), kind.param_count(&input).unwrap(), "{kind:?}");
        }
    }

    #[test]
    fn reference_counts() {
        let dense = LayerKind::Dense { out: 12, relu: false };
        assert_eq!(dense.param_count(&[100]).unwrap(), 1212);
        let conv = LayerKind::Conv { kernel: 3, filters: 64, stride: 1, padding: Padding::Same, relu: true };
        assert_eq!(conv.param_count(&[10, 10, 3]).unwrap(), 1792);
    }

    #[test]
    fn configuration_errors_name_the_layer() {
        let mut rng = RngStream::new(0, 0);
        let e = Layer::<f64>::new(
            "branch.0",
            LayerKind::PatchEncoder { patch: 4, model_dim: 8 },
            &[6, 8, 3],
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("branch.0")), "{e}");
        let e = Layer::<f64>::new("s", LayerKind::ResNeXt { cardinality: 3, kernel: 3 }, &[4, 4, 8], &mut rng);
        assert!(matches!(e, Err(Error::Config(_))));
        let e = Layer::<f64>::new("t", LayerKind::Transformer { heads: 3 }, &[4, 8], &mut rng);
        assert!(matches!(e, Err(Error::Config(_))));
        let e = Layer::<f64>::new("d", LayerKind::Dropout { rate: 1.0 }, &[4], &mut rng);
        assert!(matches!(e, Err(Error::Config(_))));
    }
}
