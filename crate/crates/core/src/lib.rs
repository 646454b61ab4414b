//! Fidelity analysis of extractive rationales.
//!
//! Given a classifier and examples annotated with binary rationale masks,
//! this crate measures how much of the model's confidence the rationale
//! carries (sufficiency) and how much disappears without it
//! (comprehensiveness), normalizes both against the empty input, traces
//! them across occlusion rates, and compares training on full inputs with
//! training on rationales alone.

pub mod curves;
pub mod error;
pub mod ingest;
pub mod masking;
pub mod metrics;
pub mod predictor;
pub mod regimes;
pub mod report;
pub mod types;

pub use error::{Error, Result};
pub use types::{Dataset, Example, Granularity, LabelSpace, Mask, PredictionDistribution, Split};
