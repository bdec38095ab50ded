//! Counterfactual data augmentation and contrastive training for
//! continuous-time dynamic link prediction.
//!
//! The pipeline runs in four stages over an immutable [`TemporalGraph`]:
//!
//! 1. [`treatment`]: a binary per-pair treatment from temporal common-neighbor
//!    counts compared against a global percentile threshold;
//! 2. [`cfsearch`]: for each training event, the most similar node pair of
//!    opposite treatment inside the k-hop neighborhood;
//! 3. [`model`]: a recency-window backbone trained on a factual link loss plus
//!    an InfoNCE-style contrastive loss over factual, counterfactual and
//!    negative edge representations;
//! 4. [`pipeline`]: chronological splits, negative sampling, AP/AUC evaluation
//!    in transductive and inductive settings.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cfsearch;
pub mod config;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod tgraph;
pub mod treatment;

pub use error::{CodclError, Result};
pub use scalar::Scalar;
pub use tgraph::{NodeId, TemporalEvent, TemporalGraph};

pub type Graph = tgraph::TemporalGraph<f64>;
pub type Event = tgraph::TemporalEvent<f64>;
pub type Graph32 = tgraph::TemporalGraph<f32>;
pub type Treatments = treatment::FittedTreatment<f64>;
pub type Params = model::ModelParameters<f64>;
pub type Params32 = model::ModelParameters<f32>;
pub type Trainer = model::Trainer<f64>;
pub type Assignment = cfsearch::CounterfactualAssignment<f64>;
