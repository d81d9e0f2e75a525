//! Deterministic resource accounting: FLOPs, parameter size, an affine
//! energy estimate, and wall-clock latency measurement.
//!
//! FLOP convention (documented per layer kind, counted on output or input
//! elements as noted):
//!
//! * `Conv2d` — `2·kh·kw·C_in` per output element (multiply + add), plus
//!   one add per output element for bias:
//!   `2·kh·kw·C_in·H_out·W_out·C_out + H_out·W_out·C_out`.
//! * `TransposedConv2d` — counted on the *input* grid, matching the scatter
//!   implementation in which every input element touches `kh·kw·C_out`
//!   output positions: `2·kh·kw·C_in·H_in·W_in·C_out`, plus one bias add
//!   per output element.
//! * `ReLU`, `MaxPool2d`, `SkipAdd` — one op per output element.
//! * `SoftmaxPerPixel` — 5 ops per class per pixel (shift, exp, sum,
//!   divide amortized).
//!
//! Model size is `4 bytes · parameter count` in MiB: parameters deploy at
//! 32-bit precision regardless of the f64 training arithmetic.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerKind, ModelGraph};
use crate::tensor::Tensor4;

/// Energy cost coefficients of the affine estimate
/// `energy = flops · joules_per_flop + size_mb · joules_per_mb`.
///
/// Defaults model a contemporary edge accelerator: 2.3 pJ per 32-bit FLOP
/// and 640 pJ per MiB of parameter traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub joules_per_flop: f64,
    pub joules_per_mb: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        EnergyConstants { joules_per_flop: 2.3e-12, joules_per_mb: 640e-12 }
    }
}

/// Static (and optionally measured) resource profile of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceProfile {
    pub flops: u64,
    pub size_mb: f64,
    pub energy_j: f64,
    /// Median forward latency in milliseconds; `None` until measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

/// Per-inference FLOPs of the whole model under the documented convention.
pub fn count_flops(model: &ModelGraph) -> Result<u64> {
    let shapes = model.layer_shapes()?;
    let mut total: u64 = 0;
    let mut in_shape = model.input_shape;
    for (layer, &out_shape) in model.layers.iter().zip(&shapes) {
        total += layer_flops(&layer.kind, in_shape, out_shape);
        in_shape = out_shape;
    }
    Ok(total)
}

/// FLOPs of a single layer given its input and output `(c, h, w)`.
pub fn layer_flops(kind: &LayerKind, input: (usize, usize, usize), output: (usize, usize, usize)) -> u64 {
    let (in_c, in_h, in_w) = (input.0 as u64, input.1 as u64, input.2 as u64);
    let (out_c, out_h, out_w) = (output.0 as u64, output.1 as u64, output.2 as u64);
    let out_elems = out_c * out_h * out_w;
    match *kind {
        LayerKind::Conv2d { kernel, .. } => {
            let (kh, kw) = (kernel.0 as u64, kernel.1 as u64);
            2 * kh * kw * in_c * out_h * out_w * out_c + out_elems
        }
        LayerKind::TransposedConv2d { kernel, .. } => {
            let (kh, kw) = (kernel.0 as u64, kernel.1 as u64);
            2 * kh * kw * in_c * in_h * in_w * out_c + out_elems
        }
        LayerKind::ReLU | LayerKind::MaxPool2d { .. } | LayerKind::SkipAdd { .. } => out_elems,
        LayerKind::SoftmaxPerPixel => 5 * out_elems,
    }
}

/// Deployed parameter size in MiB at 4 bytes per parameter.
pub fn model_size_mb(model: &ModelGraph) -> f64 {
    (model.param_count() * 4) as f64 / (1u64 << 20) as f64
}

/// The affine energy estimate. Exact f64 arithmetic — profiles recompute
/// to bit-identical values from their own fields.
pub fn estimate_energy(flops: u64, size_mb: f64, constants: &EnergyConstants) -> f64 {
    flops as f64 * constants.joules_per_flop + size_mb * constants.joules_per_mb
}

/// Computes the static profile of a model (latency unmeasured).
pub fn profile_model(model: &ModelGraph, constants: &EnergyConstants) -> Result<ResourceProfile> {
    let flops = count_flops(model)?;
    let size_mb = model_size_mb(model);
    Ok(ResourceProfile {
        flops,
        size_mb,
        energy_j: estimate_energy(flops, size_mb, constants),
        latency_ms: None,
    })
}

/// Median wall-clock forward latency in milliseconds over `repetitions`
/// timed runs, after two discarded warm-up runs. At least 3 repetitions
/// are required for the median to smooth scheduler noise. The caller is
/// responsible for not running other measurements concurrently in the
/// same process.
pub fn measure_latency(model: &ModelGraph, input: &Tensor4, repetitions: usize) -> Result<f64> {
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 repetitions for a stable median, got {repetitions}"
        )));
    }
    for _ in 0..2 {
        model.forward(input)?;
    }
    let mut samples_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let out = model.forward(input)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        // Keep the result observable so the pass cannot be optimized away.
        std::hint::black_box(&out);
        samples_ms.push(elapsed);
    }
    samples_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = samples_ms.len() / 2;
    Ok(if samples_ms.len() % 2 == 1 {
        samples_ms[mid]
    } else {
        0.5 * (samples_ms[mid - 1] + samples_ms[mid])
    })
}
