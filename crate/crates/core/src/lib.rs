//! Camouflaged-object presence classification with multiview uncertainty,
//! uncertainty-aware training and deferral of uncertain predictions to a
//! human channel.
//!
//! The crate is organised bottom-up: [`types`] and [`metrics`] are shared by
//! everything; [`synth`] generates the corpus; [`augment`], [`classifier`] and
//! [`uncertainty`] produce scores; [`partition`] and [`trainer`] implement the
//! training policy; [`deferral`] and [`review`] fuse human judgments.

pub mod augment;
pub mod classifier;
pub mod config;
pub mod deferral;
pub mod error;
pub mod metrics;
pub mod partition;
pub mod review;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod types;
pub mod uncertainty;

pub use error::{Error, Result};
pub use metrics::{compute_metrics, confusion_matrix, ConfusionMatrix, Metric, MetricsReport};
pub use types::{Label, LabelPairs, ProbVector, SampleId};
