//! Inference: a straightforward, allocation-per-layer forward pass.
//!
//! Every layer checks its output for non-finite values before the next one
//! runs, so numeric blow-ups are reported at the layer that produced them.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::{ConvParams, Layer, LayerKind, ModelGraph};

/// All per-layer outputs of one forward pass, plus the bookkeeping the
/// backward pass needs (max-pool winner positions).
pub struct ForwardTrace {
    /// `outputs[i]` is the output of layer `i`; the final entry is the
    /// model output.
    pub outputs: Vec<Tensor4>,
    /// For each max-pool layer: the flat input index that won each output
    /// element (first occurrence on ties). `None` for other kinds.
    pub(crate) pool_argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor4 {
        self.outputs.last().expect("trace of a validated model is non-empty")
    }
}

impl ModelGraph {
    /// Runs the model on a batch and returns the final activation
    /// (per-pixel class probabilities for a validated segmentation model).
    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        let mut trace = self.forward_trace(input)?;
        Ok(trace.outputs.pop().expect("validated models have at least one layer"))
    }

    /// Like [`forward`](Self::forward) but keeps every intermediate
    /// activation, for the backward pass and for tests.
    pub fn forward_trace(&self, input: &Tensor4) -> Result<ForwardTrace> {
        let [n, c, h, w] = input.shape();
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if (c, h, w) != self.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} does not match model input {:?}",
                (c, h, w),
                self.input_shape
            )));
        }
        if !input.all_finite() {
            return Err(Error::NonFiniteValue("model input".into()));
        }

        let mut outputs: Vec<Tensor4> = Vec::with_capacity(self.layers.len());
        let mut pool_argmax: Vec<Option<Vec<usize>>> = Vec::with_capacity(self.layers.len());

        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let mut argmax = None;
            let y = match &layer.kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let params = require_params(layer, i)?;
                    conv_forward(params, x, *stride, *padding)
                }
                LayerKind::TransposedConv2d { stride, padding, .. } => {
                    let params = require_params(layer, i)?;
                    deconv_forward(params, x, *stride, *padding)
                }
                LayerKind::ReLU => relu_forward(x),
                LayerKind::MaxPool2d { window, stride } => {
                    let (y, am) = maxpool_forward(x, *window, *stride);
                    argmax = Some(am);
                    y
                }
                LayerKind::SkipAdd { source } => skip_add_forward(x, &outputs[*source])?,
                LayerKind::SoftmaxPerPixel => softmax_forward(x),
            };
            if !y.all_finite() {
                return Err(Error::NonFiniteValue(format!("output of layer {i}")));
            }
            outputs.push(y);
            pool_argmax.push(argmax);
        }
        Ok(ForwardTrace { outputs, pool_argmax })
    }
}

fn require_params<'a>(layer: &'a Layer, index: usize) -> Result<&'a ConvParams> {
    layer.params.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "layer {index} is a shape-only descriptor (no parameters allocated)"
        ))
    })
}

/// Direct convolution. Output element `(n, oc, oh, ow)` accumulates
/// `weight[oc][ic][kh][kw] · input[n][ic][oh·s + kh − pad][ow·s + kw − pad]`
/// over the kernel, treating out-of-bounds input as zero, plus `bias[oc]`.
pub(super) fn conv_forward(params: &ConvParams, x: &Tensor4, stride: usize, padding: usize) -> Tensor4 {
    let [n_batch, in_c, in_h, in_w] = x.shape();
    let [out_c, _, kh, kw] = params.weight.shape();
    let out_h = (in_h + 2 * padding - kh) / stride + 1;
    let out_w = (in_w + 2 * padding - kw) / stride + 1;
    let mut y = Tensor4::zeros([n_batch, out_c, out_h, out_w]);
    for n in 0..n_batch {
        for oc in 0..out_c {
            let bias = params.bias[oc];
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = bias;
                    for ic in 0..in_c {
                        for a in 0..kh {
                            let ih = (oh * stride + a) as isize - padding as isize;
                            if ih < 0 || ih as usize >= in_h {
                                continue;
                            }
                            for b in 0..kw {
                                let iw = (ow * stride + b) as isize - padding as isize;
                                if iw < 0 || iw as usize >= in_w {
                                    continue;
                                }
                                acc += params.weight.at(oc, ic, a, b)
                                    * x.at(n, ic, ih as usize, iw as usize);
                            }
                        }
                    }
                    *y.at_mut(n, oc, oh, ow) = acc;
                }
            }
        }
    }
    y
}

/// Transposed convolution as a scatter: each input element `(n, ic, i, j)`
/// adds `input · weight[oc][ic][a][b]` into output position
/// `(i·s + a − pad, j·s + b − pad)` for every `(oc, a, b)`, dropping
/// positions that fall outside the output. Bias is added once per output
/// element.
pub(super) fn deconv_forward(params: &ConvParams, x: &Tensor4, stride: usize, padding: usize) -> Tensor4 {
    let [n_batch, in_c, in_h, in_w] = x.shape();
    let [out_c, _, kh, kw] = params.weight.shape();
    let out_h = (in_h - 1) * stride + kh - 2 * padding;
    let out_w = (in_w - 1) * stride + kw - 2 * padding;
    let mut y = Tensor4::zeros([n_batch, out_c, out_h, out_w]);
    // Bias first, then scatter the weighted input on top.
    for n in 0..n_batch {
        for oc in 0..out_c {
            let bias = params.bias[oc];
            for oh in 0..out_h {
                for ow in 0..out_w {
                    *y.at_mut(n, oc, oh, ow) = bias;
                }
            }
        }
    }
    for n in 0..n_batch {
        for ic in 0..in_c {
            for i in 0..in_h {
                for j in 0..in_w {
                    let v = x.at(n, ic, i, j);
                    for oc in 0..out_c {
                        for a in 0..kh {
                            let oh = (i * stride + a) as isize - padding as isize;
                            if oh < 0 || oh as usize >= out_h {
                                continue;
                            }
                            for b in 0..kw {
                                let ow = (j * stride + b) as isize - padding as isize;
                                if ow < 0 || ow as usize >= out_w {
                                    continue;
                                }
                                *y.at_mut(n, oc, oh as usize, ow as usize) +=
                                    v * params.weight.at(oc, ic, a, b);
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Max pooling; also records the flat input index of each winner (the first
/// position scanned, row-major, wins ties) for gradient routing.
fn maxpool_forward(x: &Tensor4, window: usize, stride: usize) -> (Tensor4, Vec<usize>) {
    let [n_batch, c, in_h, in_w] = x.shape();
    let out_h = (in_h - window) / stride + 1;
    let out_w = (in_w - window) / stride + 1;
    let mut y = Tensor4::zeros([n_batch, c, out_h, out_w]);
    let mut argmax = vec![0usize; y.len()];
    for n in 0..n_batch {
        for ch in 0..c {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for a in 0..window {
                        for b in 0..window {
                            let ih = oh * stride + a;
                            let iw = ow * stride + b;
                            let v = x.at(n, ch, ih, iw);
                            if v > best {
                                best = v;
                                best_idx = x.idx(n, ch, ih, iw);
                            }
                        }
                    }
                    let oi = y.idx(n, ch, oh, ow);
                    y.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    (y, argmax)
}

fn skip_add_forward(x: &Tensor4, lateral: &Tensor4) -> Result<Tensor4> {
    if x.shape() != lateral.shape() {
        return Err(Error::ShapeMismatch(format!(
            "skip-add operands differ: {:?} vs {:?}",
            x.shape(),
            lateral.shape()
        )));
    }
    let mut y = x.clone();
    for (v, l) in y.data_mut().iter_mut().zip(lateral.data()) {
        *v += l;
    }
    Ok(y)
}

/// Channel softmax at every pixel, with the usual max-shift for stability.
fn softmax_forward(x: &Tensor4) -> Tensor4 {
    let [n_batch, c, h, w] = x.shape();
    let mut y = Tensor4::zeros([n_batch, c, h, w]);
    for n in 0..n_batch {
        for i in 0..h {
            for j in 0..w {
                let mut max = f64::NEG_INFINITY;
                for ch in 0..c {
                    max = max.max(x.at(n, ch, i, j));
                }
                let mut denom = 0.0;
                for ch in 0..c {
                    let e = (x.at(n, ch, i, j) - max).exp();
                    *y.at_mut(n, ch, i, j) = e;
                    denom += e;
                }
                for ch in 0..c {
                    *y.at_mut(n, ch, i, j) /= denom;
                }
            }
        }
    }
    y
}
