//! The prediction interface and its realizations.
//!
//! Every analysis in the crate talks to models through [`Predictor`]. The
//! crate ships an in-process bag-of-words logistic regression
//! ([`LinearModel`]), an analytic keyword model used as a closed-form
//! oracle ([`KeywordModel`]), clients for out-of-process adapters speaking
//! the line-delimited JSON protocol ([`ExecAdapter`], [`HttpAdapter`]) and
//! an offline [`PredictionCache`] fed by [`plan::plan_requests`].

pub mod adapter;
pub mod cache;
pub mod keyword;
pub mod linear;
pub mod plan;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabelSpace, PredictionDistribution};

pub use adapter::{ExecAdapter, HttpAdapter};
pub use cache::{request_key, PredictionCache};
pub use keyword::KeywordModel;
pub use linear::{train_builtin, LinearModel, TrainConfig};
pub use plan::{plan_requests, score_from_cache, MetricPlan, PredictionRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    Builtin,
    ExternalExec,
    ExternalHttp,
    Cache,
}

/// A classifier queried on whitespace token sequences.
///
/// Implementations must return one valid distribution over
/// [`Predictor::label_space`] per input, in input order.
pub trait Predictor: Send + Sync {
    fn label_space(&self) -> &LabelSpace;

    fn kind(&self) -> PredictorKind;

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDistribution>>;

    fn predict(&self, tokens: &[String]) -> Result<PredictionDistribution> {
        let mut out = self.predict_batch(&[tokens.to_vec()])?;
        out.pop()
            .ok_or_else(|| Error::ProtocolViolation("no prediction returned".into()))
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn label_space(&self) -> &LabelSpace {
        (**self).label_space()
    }
    fn kind(&self) -> PredictorKind {
        (**self).kind()
    }
    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDistribution>> {
        (**self).predict_batch(inputs)
    }
}

/// Predicts every distinct sequence in `inputs` once and fans the results
/// back out in input order.
pub fn predict_dedup(
    predictor: &dyn Predictor,
    inputs: &[Vec<String>],
) -> Result<Vec<PredictionDistribution>> {
    let mut index: HashMap<&[String], usize> = HashMap::new();
    let mut unique: Vec<Vec<String>> = Vec::new();
    let slots: Vec<usize> = inputs
        .iter()
        .map(|seq| {
            *index.entry(seq.as_slice()).or_insert_with(|| {
                unique.push(seq.clone());
                unique.len() - 1
            })
        })
        .collect();
    let preds = predictor.predict_batch(&unique)?;
    if preds.len() != unique.len() {
        return Err(Error::ProtocolViolation(format!(
            "asked for {} predictions, got {}",
            unique.len(),
            preds.len()
        )));
    }
    Ok(slots.into_iter().map(|i| preds[i].clone()).collect())
}

/// Where predictions come from, as written on the command line:
/// `builtin:logreg`, `builtin:<model.json>`, `exec:<cmd>`, `http:<url>`,
/// `cache:<path>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredictorSpec {
    /// Train the builtin logistic regression in-process.
    BuiltinLogreg,
    /// Load a saved builtin model.
    BuiltinModel(String),
    Exec(String),
    Http(String),
    Cache(String),
}

impl FromStr for PredictorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidConfig(format!("predictor {s:?} lacks a kind prefix")))?;
        if rest.is_empty() {
            return Err(Error::InvalidConfig(format!("predictor {s:?} lacks an argument")));
        }
        match kind {
            "builtin" if rest == "logreg" => Ok(Self::BuiltinLogreg),
            "builtin" => Ok(Self::BuiltinModel(rest.to_string())),
            "exec" => Ok(Self::Exec(rest.to_string())),
            "http" => Ok(Self::Http(rest.to_string())),
            "cache" => Ok(Self::Cache(rest.to_string())),
            _ => Err(Error::InvalidConfig(format!("unknown predictor kind {kind:?}"))),
        }
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BuiltinLogreg => f.write_str("builtin:logreg"),
            Self::BuiltinModel(p) => write!(f, "builtin:{p}"),
            Self::Exec(c) => write!(f, "exec:{c}"),
            Self::Http(u) => write!(f, "http:{u}"),
            Self::Cache(p) => write!(f, "cache:{p}"),
        }
    }
}
