//! Minimal fully-convolutional network: layer graph, forward/backward,
//! SGD training, and checkpointing.
//!
//! A model is a flat list of layers evaluated in order. The only
//! non-sequential edge is [`LayerKind::SkipAdd`], which adds the output of
//! an earlier layer to the incoming activation — enough to express the
//! encoder–decoder segmentation network with one lateral connection that
//! the rest of the crate prunes and profiles.
//!
//! Convolution and transposed-convolution weights share one normalized
//! layout: `(out_channels, in_channels, kh, kw)`. That keeps filter scoring
//! and channel surgery identical for both kinds.

mod backward;
mod checkpoint;
mod forward;
mod models;
mod train;

pub use backward::{cross_entropy_loss, BackwardOutcome, GradientSet};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::ForwardTrace;
pub use models::{reference_fcn, reference_prunable_layers, vgg16_fcn_descriptor};
pub use train::{train, Dataset, TrainConfig, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// `(channels, height, width)` of an activation.
pub type Chw = (usize, usize, usize);

/// The layer vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Standard 2-D convolution with square stride/padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    /// Transposed (fractionally-strided) 2-D convolution, used to upsample.
    TransposedConv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    /// Elementwise `max(x, 0)`.
    ReLU,
    /// Max pooling over `window`×`window` patches; no padding.
    MaxPool2d { window: usize, stride: usize },
    /// Adds the output of layer `source` (an earlier index) to the incoming
    /// activation. Shapes must match exactly.
    SkipAdd { source: usize },
    /// Softmax over the channel axis, independently at every pixel.
    SoftmaxPerPixel,
}

impl LayerKind {
    /// True for the two parameterized convolution kinds.
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::TransposedConv2d { .. })
    }

    /// `(in_channels, out_channels, kh, kw)` for convolution kinds.
    pub fn conv_dims(&self) -> Option<(usize, usize, usize, usize)> {
        match *self {
            LayerKind::Conv2d { in_channels, out_channels, kernel, .. }
            | LayerKind::TransposedConv2d { in_channels, out_channels, kernel, .. } => {
                Some((in_channels, out_channels, kernel.0, kernel.1))
            }
            _ => None,
        }
    }

    /// Output `(c, h, w)` given the incoming shape. `lateral` resolves
    /// `SkipAdd` sources: it receives the source index and must return that
    /// layer's output shape.
    pub fn output_shape(
        &self,
        input: Chw,
        lateral: &dyn Fn(usize) -> Option<Chw>,
    ) -> Result<Chw> {
        let (c, h, w) = input;
        match *self {
            LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                if c != in_channels {
                    return Err(Error::ShapeMismatch(format!(
                        "conv expects {in_channels} input channels, got {c}"
                    )));
                }
                let oh = conv_out_dim(h, kernel.0, stride, padding)?;
                let ow = conv_out_dim(w, kernel.1, stride, padding)?;
                Ok((out_channels, oh, ow))
            }
            LayerKind::TransposedConv2d { in_channels, out_channels, kernel, stride, padding } => {
                if c != in_channels {
                    return Err(Error::ShapeMismatch(format!(
                        "transposed conv expects {in_channels} input channels, got {c}"
                    )));
                }
                let oh = deconv_out_dim(h, kernel.0, stride, padding)?;
                let ow = deconv_out_dim(w, kernel.1, stride, padding)?;
                Ok((out_channels, oh, ow))
            }
            LayerKind::ReLU | LayerKind::SoftmaxPerPixel => Ok(input),
            LayerKind::MaxPool2d { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(Error::InvalidArgument("pool window/stride must be > 0".into()));
                }
                if h < window || w < window {
                    return Err(Error::ShapeMismatch(format!(
                        "pool window {window} exceeds input {h}x{w}"
                    )));
                }
                Ok((c, (h - window) / stride + 1, (w - window) / stride + 1))
            }
            LayerKind::SkipAdd { source } => {
                let src = lateral(source).ok_or_else(|| {
                    Error::ShapeMismatch(format!("skip-add source {source} is not resolvable"))
                })?;
                if src != input {
                    return Err(Error::ShapeMismatch(format!(
                        "skip-add operands differ: {input:?} vs {src:?}"
                    )));
                }
                Ok(input)
            }
        }
    }
}

/// `floor((h + 2·padding − k) / stride) + 1`, rejecting degenerate setups.
fn conv_out_dim(h: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument("kernel and stride must be > 0".into()));
    }
    let padded = h + 2 * padding;
    if padded < k {
        return Err(Error::ShapeMismatch(format!(
            "kernel {k} exceeds padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// `(h − 1)·stride − 2·padding + k`, the inverse of the conv formula.
fn deconv_out_dim(h: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument("kernel and stride must be > 0".into()));
    }
    if h == 0 {
        return Err(Error::ShapeMismatch("transposed conv on empty input".into()));
    }
    let grown = (h - 1) * stride + k;
    if grown <= 2 * padding {
        return Err(Error::ShapeMismatch(format!(
            "padding {padding} swallows transposed conv output of {grown}"
        )));
    }
    Ok(grown - 2 * padding)
}

/// Weights and bias of one convolution-kind layer.
///
/// `weight` is laid out `(out_channels, in_channels, kh, kw)` for both
/// convolution kinds; `bias` has one entry per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub weight: Tensor4,
    pub bias: Vec<f64>,
}

/// One layer: its kind plus parameters when the kind has any.
///
/// `params == None` on a convolution kind marks a shape-only descriptor —
/// usable for FLOP/size accounting but not for forward passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: Option<ConvParams>,
}

impl Layer {
    pub fn new(kind: LayerKind) -> Self {
        Layer { kind, params: None }
    }

    /// A convolution-kind layer with zero-initialized parameters.
    pub fn with_zero_params(kind: LayerKind) -> Self {
        let params = kind.conv_dims().map(|(ic, oc, kh, kw)| ConvParams {
            weight: Tensor4::zeros([oc, ic, kh, kw]),
            bias: vec![0.0; oc],
        });
        Layer { kind, params }
    }
}

/// A sequential layer graph with optional skip connections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    /// Expected `(channels, height, width)` of each input sample.
    pub input_shape: Chw,
}

impl ModelGraph {
    /// Output shape of every layer, in order, starting from `input_shape`.
    pub fn layer_shapes(&self) -> Result<Vec<Chw>> {
        let mut shapes: Vec<Chw> = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            let resolve = |src: usize| {
                if src < i {
                    Some(shapes[src])
                } else {
                    None
                }
            };
            cur = layer.kind.output_shape(cur, &resolve).map_err(|e| {
                Error::ShapeMismatch(format!("layer {i}: {e}"))
            })?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Structural validation: consistent shapes end to end, a single final
    /// per-pixel softmax over `num_classes` channels, parameters matching
    /// their declared dimensions, and a segmentation-shaped output
    /// (`num_classes`, input height, input width).
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("model has no layers".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let is_last = i + 1 == self.layers.len();
            if matches!(layer.kind, LayerKind::SoftmaxPerPixel) != is_last {
                return Err(Error::InvalidArgument(format!(
                    "softmax must appear exactly once, as the final layer (layer {i})"
                )));
            }
            if let Some((ic, oc, kh, kw)) = layer.kind.conv_dims() {
                if let Some(p) = &layer.params {
                    if p.weight.shape() != [oc, ic, kh, kw] {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i}: weight shape {:?} does not match declared ({oc}, {ic}, {kh}, {kw})",
                            p.weight.shape()
                        )));
                    }
                    if p.bias.len() != oc {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i}: bias length {} does not match {oc} output channels",
                            p.bias.len()
                        )));
                    }
                }
            } else if layer.params.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} has parameters but its kind takes none"
                )));
            }
            if let LayerKind::SkipAdd { source } = layer.kind {
                if source >= i {
                    return Err(Error::InvalidArgument(format!(
                        "layer {i}: skip-add source {source} must precede it"
                    )));
                }
            }
        }
        let shapes = self.layer_shapes()?;
        let (last_c, last_h, last_w) = *shapes.last().expect("non-empty");
        let (_, in_h, in_w) = self.input_shape;
        if last_c != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "final layer emits {last_c} channels, expected {} classes",
                self.num_classes
            )));
        }
        if (last_h, last_w) != (in_h, in_w) {
            return Err(Error::ShapeMismatch(format!(
                "decoder output {last_h}x{last_w} does not restore input {in_h}x{in_w}"
            )));
        }
        Ok(())
    }

    /// True when every convolution-kind layer has parameters allocated.
    pub fn has_params(&self) -> bool {
        self.layers
            .iter()
            .all(|l| !l.kind.is_conv() || l.params.is_some())
    }

    /// Glorot-uniform weight init (`±sqrt(6 / (fan_in + fan_out))` with
    /// `fan = channels · kh · kw`), zero biases. Deterministic given `rng`.
    pub fn init_params(&mut self, rng: &mut impl Rng) {
        for layer in &mut self.layers {
            if let Some((ic, oc, kh, kw)) = layer.kind.conv_dims() {
                let fan_in = (ic * kh * kw) as f64;
                let fan_out = (oc * kh * kw) as f64;
                let bound = (6.0 / (fan_in + fan_out)).sqrt();
                let mut weight = Tensor4::zeros([oc, ic, kh, kw]);
                for v in weight.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
                layer.params = Some(ConvParams { weight, bias: vec![0.0; oc] });
            }
        }
    }

    /// Number of scalar parameters (weights + biases).
    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .filter_map(|l| l.kind.conv_dims())
            .map(|(ic, oc, kh, kw)| (oc * ic * kh * kw + oc) as u64)
            .sum()
    }

    /// Output channel count of each convolution-kind layer, keyed by index.
    pub fn filter_counts(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.kind.conv_dims().map(|(_, oc, _, _)| (i, oc)))
            .collect()
    }
}
