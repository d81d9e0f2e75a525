//! Reverse-mode differentiation of the pixel-wise cross-entropy loss.
//!
//! `backward` replays a forward trace and pushes loss gradients from the
//! softmax output back to every convolution weight and bias. Gradients with
//! respect to activations flow through a per-layer slot vector; the skip
//! connection simply accumulates into its source layer's slot, which works
//! because consumers always sit at higher indices than producers.

use crate::error::{Error, Result};
use crate::tensor::{LabelMask, Tensor4};

use super::{ConvParams, LayerKind, ModelGraph};

/// Parameter gradients, aligned with `ModelGraph::layers`; `None` for
/// parameter-free layers. Each entry mirrors the layer's `ConvParams`
/// shapes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Option<ConvParams>>,
}

/// Loss value and parameter gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct BackwardOutcome {
    pub loss: f64,
    pub grads: GradientSet,
}

/// Mean pixel-wise cross-entropy: `−mean ln p[class]` over every pixel of
/// every sample. `probs` must already be per-pixel probabilities (the
/// output of a validated model).
pub fn cross_entropy_loss(probs: &Tensor4, target: &LabelMask) -> Result<f64> {
    let [n, c, h, w] = probs.shape();
    if target.shape() != [n, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {:?} vs labels {:?}",
            probs.shape(),
            target.shape()
        )));
    }
    if usize::from(target.max_class()) >= c {
        return Err(Error::ShapeMismatch(format!(
            "label {} out of range for {c} classes",
            target.max_class()
        )));
    }
    let mut sum = 0.0;
    for ni in 0..n {
        for hi in 0..h {
            for wi in 0..w {
                let t = usize::from(target.at(ni, hi, wi));
                sum -= probs.at(ni, t, hi, wi).ln();
            }
        }
    }
    let loss = sum / (n * h * w) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteValue("cross-entropy loss".into()));
    }
    Ok(loss)
}

impl ModelGraph {
    /// Forward pass + loss + gradients of the loss with respect to every
    /// parameter. The loss is mean-reduced over batch and pixels, so
    /// duplicating a sample leaves loss and gradients unchanged.
    pub fn backward(&self, input: &Tensor4, target: &LabelMask) -> Result<BackwardOutcome> {
        let trace = self.forward_trace(input)?;
        let probs = trace.output();
        let loss = cross_entropy_loss(probs, target)?;

        let [n, _, h, w] = probs.shape();
        let scale = 1.0 / (n * h * w) as f64;

        // d loss / d probs: −scale / p at the labeled class, 0 elsewhere.
        let mut g_probs = Tensor4::zeros(probs.shape());
        for ni in 0..n {
            for hi in 0..h {
                for wi in 0..w {
                    let t = usize::from(target.at(ni, hi, wi));
                    *g_probs.at_mut(ni, t, hi, wi) = -scale / probs.at(ni, t, hi, wi);
                }
            }
        }

        let num_layers = self.layers.len();
        let mut grad_at: Vec<Option<Tensor4>> = vec![None; num_layers];
        grad_at[num_layers - 1] = Some(g_probs);
        let mut grads = GradientSet { layers: vec![None; num_layers] };

        for i in (0..num_layers).rev() {
            let g_out = grad_at[i]
                .take()
                .expect("every layer output is consumed by a later layer");
            let x = if i == 0 { input } else { &trace.outputs[i - 1] };
            match &self.layers[i].kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let params = self.layers[i].params.as_ref().expect("checked in forward");
                    let (g_x, g_p) = conv_backward(params, x, &g_out, *stride, *padding);
                    grads.layers[i] = Some(g_p);
                    if i > 0 {
                        add_into(&mut grad_at[i - 1], g_x);
                    }
                }
                LayerKind::TransposedConv2d { stride, padding, .. } => {
                    let params = self.layers[i].params.as_ref().expect("checked in forward");
                    let (g_x, g_p) = deconv_backward(params, x, &g_out, *stride, *padding);
                    grads.layers[i] = Some(g_p);
                    if i > 0 {
                        add_into(&mut grad_at[i - 1], g_x);
                    }
                }
                LayerKind::ReLU => {
                    let y = &trace.outputs[i];
                    let mut g_x = g_out;
                    for (g, out) in g_x.data_mut().iter_mut().zip(y.data()) {
                        if *out <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    if i > 0 {
                        add_into(&mut grad_at[i - 1], g_x);
                    }
                }
                LayerKind::MaxPool2d { .. } => {
                    let argmax = trace.pool_argmax[i]
                        .as_ref()
                        .expect("pool layers record winners");
                    let mut g_x = Tensor4::zeros(x.shape());
                    for (oi, &src) in argmax.iter().enumerate() {
                        g_x.data_mut()[src] += g_out.data()[oi];
                    }
                    if i > 0 {
                        add_into(&mut grad_at[i - 1], g_x);
                    }
                }
                LayerKind::SkipAdd { source } => {
                    // d(x + lateral) passes the gradient to both operands.
                    add_into(&mut grad_at[*source], g_out.clone());
                    if i > 0 {
                        add_into(&mut grad_at[i - 1], g_out);
                    }
                }
                LayerKind::SoftmaxPerPixel => {
                    let p = &trace.outputs[i];
                    let g_z = softmax_backward(p, &g_out);
                    if i > 0 {
                        add_into(&mut grad_at[i - 1], g_z);
                    }
                }
            }
        }
        Ok(BackwardOutcome { loss, grads })
    }

    /// In-place SGD update: `param −= lr · grad` for every parameter.
    pub fn apply_gradients(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient set covers {} layers, model has {}",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            match (&mut layer.params, grad) {
                (Some(p), Some(g)) => {
                    if p.weight.shape() != g.weight.shape() || p.bias.len() != g.bias.len() {
                        return Err(Error::ShapeMismatch(
                            "gradient shapes do not match parameters".into(),
                        ));
                    }
                    for (w, gw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                        *w -= learning_rate * gw;
                    }
                    for (b, gb) in p.bias.iter_mut().zip(&g.bias) {
                        *b -= learning_rate * gb;
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::ShapeMismatch(
                        "gradient set does not line up with parameterized layers".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

fn add_into(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

/// Gradients of a direct convolution: walks the same index set as the
/// forward pass, accumulating into the input, weight, and bias gradients.
fn conv_backward(
    params: &ConvParams,
    x: &Tensor4,
    g_out: &Tensor4,
    stride: usize,
    padding: usize,
) -> (Tensor4, ConvParams) {
    let [n_batch, in_c, in_h, in_w] = x.shape();
    let [out_c, _, kh, kw] = params.weight.shape();
    let [_, _, out_h, out_w] = g_out.shape();
    let mut g_x = Tensor4::zeros(x.shape());
    let mut g_w = Tensor4::zeros(params.weight.shape());
    let mut g_b = vec![0.0; out_c];
    for n in 0..n_batch {
        for oc in 0..out_c {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let g = g_out.at(n, oc, oh, ow);
                    if g == 0.0 {
                        continue;
                    }
                    g_b[oc] += g;
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
                                let (ih, iw) = (ih as usize, iw as usize);
                                *g_w.at_mut(oc, ic, a, b) += g * x.at(n, ic, ih, iw);
                                *g_x.at_mut(n, ic, ih, iw) +=
                                    g * params.weight.at(oc, ic, a, b);
                            }
                        }
                    }
                }
            }
        }
    }
    (g_x, ConvParams { weight: g_w, bias: g_b })
}

/// Gradients of the transposed convolution, mirroring its scatter forward:
/// for every (input element, kernel tap) pair that contributed to a valid
/// output position, route the output gradient back to the input and weight.
fn deconv_backward(
    params: &ConvParams,
    x: &Tensor4,
    g_out: &Tensor4,
    stride: usize,
    padding: usize,
) -> (Tensor4, ConvParams) {
    let [n_batch, in_c, in_h, in_w] = x.shape();
    let [out_c, _, kh, kw] = params.weight.shape();
    let [_, _, out_h, out_w] = g_out.shape();
    let mut g_x = Tensor4::zeros(x.shape());
    let mut g_w = Tensor4::zeros(params.weight.shape());
    let mut g_b = vec![0.0; out_c];
    for n in 0..n_batch {
        for oc in 0..out_c {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    g_b[oc] += g_out.at(n, oc, oh, ow);
                }
            }
        }
        for ic in 0..in_c {
            for i in 0..in_h {
                for j in 0..in_w {
                    let xv = x.at(n, ic, i, j);
                    let mut g_in = 0.0;
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
                                let g = g_out.at(n, oc, oh as usize, ow as usize);
                                g_in += g * params.weight.at(oc, ic, a, b);
                                *g_w.at_mut(oc, ic, a, b) += g * xv;
                            }
                        }
                    }
                    *g_x.at_mut(n, ic, i, j) += g_in;
                }
            }
        }
    }
    (g_x, ConvParams { weight: g_w, bias: g_b })
}

/// Jacobian-vector product of the per-pixel softmax:
/// `g_z[c] = p[c] · (g[c] − Σ_j g[j]·p[j])` at each pixel.
fn softmax_backward(p: &Tensor4, g_out: &Tensor4) -> Tensor4 {
    let [n_batch, c, h, w] = p.shape();
    let mut g_z = Tensor4::zeros(p.shape());
    for n in 0..n_batch {
        for hi in 0..h {
            for wi in 0..w {
                let mut dot = 0.0;
                for ch in 0..c {
                    dot += g_out.at(n, ch, hi, wi) * p.at(n, ch, hi, wi);
                }
                for ch in 0..c {
                    *g_z.at_mut(n, ch, hi, wi) =
                        p.at(n, ch, hi, wi) * (g_out.at(n, ch, hi, wi) - dot);
                }
            }
        }
    }
    g_z
}
