//! Accuracy under the three rationale regimes.
//!
//! * No-rationale: trained on full text, evaluated on full text.
//! * Eval-rationale: trained on full text, evaluated on rationale-only text.
//! * Train-eval-rationale: trained and evaluated on rationale-only text.
//!
//! Models come either from the builtin trainer or from three prediction
//! caches answering the regimes plan over the test split.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::apply_mask;
use crate::predictor::cache::{Lookup, PredictionCache};
use crate::predictor::linear::{train_builtin, LinearModel, TrainConfig};
use crate::predictor::plan::regime_keys;
use crate::predictor::Predictor;
use crate::types::{Dataset, PredictionDistribution, Split};

/// Disjoint train/dev/test partitions of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Option<Dataset>,
    pub test: Dataset,
}

impl Splits {
    /// Fails with [`Error::SplitOverlap`] listing ids found in more than
    /// one partition.
    pub fn new(train: Dataset, dev: Option<Dataset>, test: Dataset) -> Result<Self> {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut overlap = Vec::new();
        let parts = [Some(&train), dev.as_ref(), Some(&test)];
        for part in parts.into_iter().flatten() {
            for e in &part.examples {
                if !seen.insert(&e.id) {
                    overlap.push(e.id.clone());
                }
            }
        }
        if !overlap.is_empty() {
            overlap.sort();
            overlap.dedup();
            return Err(Error::SplitOverlap(overlap));
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { train, dev, test })
    }

    /// Partitions by each example's split tag, keeping only
    /// rationale-annotated examples.
    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        if let Some(e) = dataset.examples.iter().find(|e| e.split.is_none()) {
            return Err(Error::InvalidConfig(format!(
                "example {} has no split; regimes need train and test splits",
                e.id
            )));
        }
        let annotated = dataset.filtered(|e| e.annotated);
        let dev = annotated.split(Split::Dev);
        Self::new(
            annotated.split(Split::Train),
            (!dev.is_empty()).then_some(dev),
            annotated.split(Split::Test),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub n: usize,
    pub correct: usize,
    /// `None` when the class has no examples in the split.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    /// Broken down by gold class, in label-space order.
    pub per_class: Vec<ClassAccuracy>,
}

fn tally(split: &Dataset, preds: &[PredictionDistribution]) -> Accuracy {
    let space = &split.label_space;
    let mut n = vec![0usize; space.len()];
    let mut correct = vec![0usize; space.len()];
    for (y, p) in split.gold_indices().into_iter().zip(preds) {
        n[y] += 1;
        if p.argmax() == y {
            correct[y] += 1;
        }
    }
    let total: usize = n.iter().sum();
    let hits: usize = correct.iter().sum();
    Accuracy {
        accuracy: hits as f64 / total as f64,
        n: total,
        correct: hits,
        per_class: space
            .labels()
            .iter()
            .enumerate()
            .map(|(c, label)| ClassAccuracy {
                label: label.clone(),
                n: n[c],
                correct: correct[c],
                accuracy: (n[c] > 0).then(|| correct[c] as f64 / n[c] as f64),
            })
            .collect(),
    }
}

/// Fraction of `split` whose argmax prediction equals the gold label,
/// masking inputs to their rationales first when `use_rationale_mask`.
pub fn accuracy(
    predictor: &dyn Predictor,
    split: &Dataset,
    use_rationale_mask: bool,
) -> Result<Accuracy> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictor.label_space() != &split.label_space {
        return Err(Error::InvalidLabelSpace(
            "predictor and dataset label spaces differ".into(),
        ));
    }
    let inputs: Vec<Vec<String>> = split
        .examples
        .iter()
        .map(|e| {
            if use_rationale_mask {
                apply_mask(e, &e.rationale)
            } else {
                Ok(e.tokens.clone())
            }
        })
        .collect::<Result<_>>()?;
    let preds = predictor.predict_batch(&inputs)?;
    if preds.len() != inputs.len() {
        return Err(Error::ProtocolViolation(format!(
            "asked for {} predictions, got {}",
            inputs.len(),
            preds.len()
        )));
    }
    Ok(tally(split, &preds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    BuiltinTrained,
    CacheSupplied,
}

/// Prediction caches for the three regimes, each answering the regimes
/// plan over the test split.
#[derive(Debug, Clone, Copy)]
pub struct RegimeCaches<'a> {
    /// Full-text model on the full test inputs.
    pub no_rationale: &'a PredictionCache,
    /// Full-text model on the rationale-only test inputs.
    pub eval_rationale: &'a PredictionCache,
    /// Rationale-trained model on the rationale-only test inputs.
    pub train_eval_rationale: &'a PredictionCache,
}

#[derive(Debug, Clone)]
pub enum RegimeSource<'a> {
    Builtin(TrainConfig),
    Caches(RegimeCaches<'a>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeResult {
    pub dataset: String,
    pub no_rationale: Accuracy,
    pub eval_rationale: Accuracy,
    pub train_eval_rationale: Accuracy,
    pub provenance: Provenance,
    /// L2 strengths picked on dev for the full-text and rationale models.
    pub l2_full: Option<f64>,
    pub l2_rationale: Option<f64>,
}

/// Trains on `train`, picking the L2 strength with the best dev accuracy
/// when a dev split exists (first wins ties).
fn select_and_train(
    splits: &Splits,
    config: &TrainConfig,
    use_rationale_mask: bool,
    seed: u64,
) -> Result<(LinearModel, f64)> {
    let grid = match &splits.dev {
        Some(_) if !config.l2_grid.is_empty() => config.l2_grid.clone(),
        _ => vec![config.l2],
    };
    let mut best: Option<(LinearModel, f64, f64)> = None;
    for l2 in grid {
        let cfg = TrainConfig { l2, ..config.clone() };
        let model = train_builtin(&splits.train, &cfg, use_rationale_mask, seed)?;
        let score = match &splits.dev {
            Some(dev) => accuracy(&model, dev, use_rationale_mask)?.accuracy,
            None => 0.0,
        };
        if best.as_ref().is_none_or(|(_, _, s)| score > *s) {
            best = Some((model, l2, score));
        }
    }
    let (model, l2, _) = best.expect("grid is non-empty");
    Ok((model, l2))
}

fn from_caches(test: &Dataset, caches: RegimeCaches<'_>) -> Result<[Accuracy; 3]> {
    let keys = regime_keys(test)?;
    let read = |cache: &PredictionCache, use_rationale: bool| -> Result<Accuracy> {
        if cache.label_space() != &test.label_space {
            return Err(Error::InvalidLabelSpace(
                "cache and dataset label spaces differ".into(),
            ));
        }
        let mut lookup = Lookup::new(cache);
        let preds: Vec<Option<PredictionDistribution>> = keys
            .iter()
            .map(|(full, rationale)| lookup.get(if use_rationale { rationale } else { full }))
            .collect();
        lookup.finish()?;
        let preds: Vec<PredictionDistribution> = preds.into_iter().flatten().collect();
        Ok(tally(test, &preds))
    };
    Ok([
        read(caches.no_rationale, false)?,
        read(caches.eval_rationale, true)?,
        read(caches.train_eval_rationale, true)?,
    ])
}

/// Computes the three regime accuracies on the test split.
pub fn run_regimes(splits: &Splits, source: &RegimeSource<'_>, seed: u64) -> Result<RegimeResult> {
    let dataset = splits.test.name.clone();
    match source {
        RegimeSource::Builtin(config) => {
            let (full, masked) = rayon::join(
                || select_and_train(splits, config, false, seed),
                || select_and_train(splits, config, true, seed),
            );
            let (full, l2_full) = full?;
            let (masked, l2_rationale) = masked?;
            Ok(RegimeResult {
                dataset,
                no_rationale: accuracy(&full, &splits.test, false)?,
                eval_rationale: accuracy(&full, &splits.test, true)?,
                train_eval_rationale: accuracy(&masked, &splits.test, true)?,
                provenance: Provenance::BuiltinTrained,
                l2_full: Some(l2_full),
                l2_rationale: Some(l2_rationale),
            })
        }
        RegimeSource::Caches(caches) => {
            let [no_rationale, eval_rationale, train_eval_rationale] =
                from_caches(&splits.test, *caches)?;
            Ok(RegimeResult {
                dataset,
                no_rationale,
                eval_rationale,
                train_eval_rationale,
                provenance: Provenance::CacheSupplied,
                l2_full: None,
                l2_rationale: None,
            })
        }
    }
}

/// Trains the two builtin regime models with the same selection as
/// [`run_regimes`]; useful for producing caches.
pub fn train_regime_models(
    splits: &Splits,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LinearModel, LinearModel)> {
    let (full, masked) = rayon::join(
        || select_and_train(splits, config, false, seed),
        || select_and_train(splits, config, true, seed),
    );
    Ok((full?.0, masked?.0))
}
