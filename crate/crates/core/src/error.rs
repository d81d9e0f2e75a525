//! Crate-wide error type.
//!
//! One enum covers every subsystem so call sites can bubble errors with `?`
//! without conversion boilerplate; variants carry enough context to be
//! actionable in CLI messages.

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or mask dimensions do not line up with what an operation needs.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    /// Training loss left the finite range.
    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },

    /// A caller-supplied value is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Filter scoring/pruning was asked about a layer that has no filters.
    #[error("layer {0} is not prunable (no convolution filters)")]
    NotPrunableLayer(usize),

    /// Channel surgery produced (or would produce) an inconsistent graph.
    #[error("channel surgery error: {0}")]
    SurgeryShapeError(String),

    /// No roadmap entry satisfies the requested budget.
    #[error("no feasible model for the given budget")]
    NoFeasibleModel,

    /// A transaction failed ledger validation; nothing was committed.
    #[error("transaction {index} rejected: {reason}")]
    ValidationError { index: usize, reason: String },

    /// A biomass report referenced a field with no registered farmer.
    #[error("unknown field: {0}")]
    UnknownField(String),

    /// A production report referenced an unregistered processing plant.
    #[error("unknown plant: {0}")]
    UnknownPlant(String),

    /// No yield factor is configured for a crop that reached the plant audit.
    #[error("no yield factor configured for crop {0}")]
    UnknownYieldFactor(String),

    /// A checkpoint file is malformed or has the wrong version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
