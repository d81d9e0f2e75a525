//! On-device crop monitoring toolkit: a desk-scale biomass segmentation
//! network, l1-norm iterative filter pruning with resource profiling, a
//! budget-driven model roadmap/selector, a hash-chained supply-chain ledger
//! with two audit contracts, and a UAV survey-mission simulator that ties
//! them together.
//!
//! Determinism is a design rule: every stochastic component takes an
//! explicit seed, so identical inputs reproduce identical artifacts.

pub mod cost_model;
pub mod error;
pub mod ledger;
pub mod mission;
pub mod nn;
pub mod pruning;
pub mod roadmap;
pub mod segmentation;
pub mod tensor;

pub use error::{Error, Result};
