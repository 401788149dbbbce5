//! Two-stage prediction of the final steady-state power of a research
//! reactor transient from its initial state and control-rod moves.
//!
//! Stage one classifies the final power into one of five decade-wide
//! classes; stage two regresses the normalized power given the class
//! probabilities. [`pipeline::run_pipeline`] trains and scores every
//! variant end to end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod compose;
pub mod domain;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod zoo;

pub use compose::{JointPrediction, TwoStageModel};
pub use domain::{
    CoreConfiguration, Direction, PowerClassBins, ReactorState, TransientObservation,
};
pub use error::{Error, Result};
pub use nn::{NetworkModel, TrainingConfig};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport};
pub use preprocess::{EncodedSample, FeatureLayout, VariantId};
