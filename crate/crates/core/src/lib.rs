//! Training and evaluation of binary classifiers under subpopulation shift.
//!
//! The crate covers the full pipeline: loading or synthesizing grouped
//! binary-outcome data ([`dataset`]), feedforward models with a weighted
//! cross-entropy objective ([`model`]), ERM and group-robust training with
//! exponentiated-gradient group weights ([`trainer`]), threshold-free
//! discrimination and calibration metrics ([`metrics`]), cross-validated
//! hyperparameter sweeps and worst-case selection ([`selection`]),
//! stratified-bootstrap confidence intervals ([`evaluation`]), and the
//! config-file orchestration tying those together ([`experiment`]).
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! crate-root aliases fix the common `f64` case.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use dataset::{Partition, SyntheticSpec};
pub use experiment::ExperimentConfig;
pub use model::ModelSpec;
pub use selection::{GridSpec, SelectionCriterion};
pub use trainer::ObjectiveSpec;

/// `f64` specializations of the generic core types.
pub type Dataset = dataset::Dataset<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type TrainedModel = trainer::TrainedModel<f64>;
pub type GroupWeights = trainer::GroupWeights<f64>;
pub type GroupMetricTable = metrics::GroupMetricTable<f64>;
pub type RunRecord = selection::RunRecord<f64>;
pub type MetricReport = evaluation::MetricReport<f64>;
