//! Plain mini-batch SGD with a seeded shuffle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMask, Tensor4};

use super::ModelGraph;

/// Supervised samples: one `(image, mask)` pair per entry, each with
/// batch dimension 1.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<(Tensor4, LabelMask)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// SGD hyperparameters. Runs are deterministic given `shuffle_seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 40, learning_rate: 1e-2, batch_size: 8, shuffle_seed: 17 }
    }
}

/// Final model plus the per-epoch mean loss curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub loss_curve: Vec<f64>,
}

/// Trains a copy of `model` with mini-batch SGD on the pixel-wise
/// cross-entropy loss. Sample order is reshuffled every epoch from one
/// seeded generator; a zero learning rate degenerates to evaluation and
/// returns parameters bit-identical to the input.
pub fn train(model: &ModelGraph, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be a finite value >= 0, got {}",
            cfg.learning_rate
        )));
    }

    let mut current = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&Tensor4> = chunk.iter().map(|&i| &data.samples[i].0).collect();
            let masks: Vec<&LabelMask> = chunk.iter().map(|&i| &data.samples[i].1).collect();
            let batch = Tensor4::stack_batch(&images)?;
            let labels = LabelMask::stack_batch(&masks)?;
            let out = current.backward(&batch, &labels).map_err(|e| match e {
                // A non-finite activation or loss mid-training is divergence,
                // not a caller error.
                Error::NonFiniteValue(_) => {
                    Error::DivergenceDetected { epoch, loss: f64::NAN }
                }
                other => other,
            })?;
            if !out.loss.is_finite() {
                return Err(Error::DivergenceDetected { epoch, loss: out.loss });
            }
            current.apply_gradients(&out.grads, cfg.learning_rate)?;
            epoch_loss_sum += out.loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let mean = epoch_loss_sum / seen as f64;
        if !mean.is_finite() {
            return Err(Error::DivergenceDetected { epoch, loss: mean });
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome { model: current, loss_curve })
}
