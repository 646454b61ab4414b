//! Point fidelity of a rationale: sufficiency, comprehensiveness, the null
//! difference baseline and their normalized forms.
//!
//! All quantities are probabilities of the class `ŷ` predicted on the full
//! input. Four model queries per example are enough: full input, rationale
//! only, complement only and the empty input.
//!
//! ```text
//! suff      = 1 - max(0, p_full - p_rationale)
//! comp      = max(0, p_full - p_complement)
//! null_diff = max(0, p_full - p_empty)        = 1 - suff(empty) = comp(all)
//! norm_suff = clip((suff - suff(empty)) / (1 - suff(empty)))
//! norm_comp = clip(comp / null_diff)
//! ```
//!
//! In [`MetricMode::Eraser`] the two differences are left unclipped.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{apply_mask, complement, empty_mask};
use crate::predictor::{predict_dedup, Predictor};
use crate::types::{Dataset, Example, LabelSpace, Mask, PredictionDistribution};

/// Normalized metrics are undefined when the null difference is below this.
pub const NORM_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// Probability differences clipped at zero; metrics lie in [0, 1].
    #[default]
    Clipped,
    /// Unclipped differences, comparable with ERASER's published numbers.
    Eraser,
}

impl FromStr for MetricMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clipped" => Ok(Self::Clipped),
            "eraser" => Ok(Self::Eraser),
            _ => Err(Error::InvalidConfig(format!("unknown metric mode {s:?}"))),
        }
    }
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Clipped => "clipped",
            Self::Eraser => "eraser",
        })
    }
}

fn diff(a: f64, b: f64, mode: MetricMode) -> f64 {
    match mode {
        MetricMode::Clipped => (a - b).max(0.0),
        MetricMode::Eraser => a - b,
    }
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn sufficiency(p_full: f64, p_rationale: f64, mode: MetricMode) -> f64 {
    1.0 - diff(p_full, p_rationale, mode)
}

pub fn comprehensiveness(p_full: f64, p_complement: f64, mode: MetricMode) -> f64 {
    diff(p_full, p_complement, mode)
}

/// Always clipped, whatever the metric mode.
pub fn null_difference(p_full: f64, p_empty: f64) -> f64 {
    (p_full - p_empty).max(0.0)
}

/// Min-max normalization against the empty-input baseline. Both values are
/// `None` when `null_diff < NORM_EPSILON`.
pub fn normalize(
    suff: f64,
    comp: f64,
    suff_empty: f64,
    null_diff: f64,
) -> (Option<f64>, Option<f64>) {
    if null_diff < NORM_EPSILON {
        return (None, None);
    }
    let norm_suff = clip01((suff - suff_empty) / (1.0 - suff_empty));
    let norm_comp = clip01(comp / null_diff);
    (Some(norm_suff), Some(norm_comp))
}

/// The four model outputs one fidelity record is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityInputs {
    pub full: PredictionDistribution,
    pub rationale: PredictionDistribution,
    pub complement: PredictionDistribution,
    pub empty: PredictionDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRecord {
    pub id: String,
    pub gold_label: String,
    pub predicted_class: String,
    pub p_full: f64,
    pub p_rationale: f64,
    pub p_complement: f64,
    pub p_empty: f64,
    pub suff: f64,
    pub comp: f64,
    pub null_diff: f64,
    pub norm_suff: Option<f64>,
    pub norm_comp: Option<f64>,
    pub mode: MetricMode,
}

impl FidelityRecord {
    pub fn from_inputs(
        example: &Example,
        space: &LabelSpace,
        inputs: &FidelityInputs,
        mode: MetricMode,
    ) -> Self {
        let y = inputs.full.argmax();
        let p_full = inputs.full.prob(y);
        let p_rationale = inputs.rationale.prob(y);
        let p_complement = inputs.complement.prob(y);
        let p_empty = inputs.empty.prob(y);

        let suff = sufficiency(p_full, p_rationale, mode);
        let comp = comprehensiveness(p_full, p_complement, mode);
        let null_diff = null_difference(p_full, p_empty);
        let suff_empty = sufficiency(p_full, p_empty, mode);
        let (norm_suff, norm_comp) = normalize(suff, comp, suff_empty, null_diff);

        Self {
            id: example.id.clone(),
            gold_label: example.gold_label.clone(),
            predicted_class: space.label(y).to_string(),
            p_full,
            p_rationale,
            p_complement,
            p_empty,
            suff,
            comp,
            null_diff,
            norm_suff,
            norm_comp,
            mode,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.norm_suff.is_some()
    }
}

fn check_space(predictor: &dyn Predictor, space: &LabelSpace) -> Result<()> {
    if predictor.label_space() != space {
        return Err(Error::InvalidConfig(format!(
            "predictor labels {:?} differ from dataset labels {:?}",
            predictor.label_space().labels(),
            space.labels()
        )));
    }
    Ok(())
}

/// Queries the full, rationale-only, complement-only and empty inputs for
/// `mask` in one batch.
pub fn query_inputs(
    predictor: &dyn Predictor,
    example: &Example,
    mask: &Mask,
) -> Result<FidelityInputs> {
    let inputs = vec![
        example.tokens.clone(),
        apply_mask(example, mask)?,
        apply_mask(example, &complement(example, mask)?)?,
        apply_mask(example, &empty_mask(example))?,
    ];
    let mut out = predict_dedup(predictor, &inputs)?.into_iter();
    let mut next = || out.next().expect("four predictions");
    Ok(FidelityInputs {
        full: next(),
        rationale: next(),
        complement: next(),
        empty: next(),
    })
}

/// Fidelity of an arbitrary mask (the rationale itself, an occluded
/// rationale, a random baseline, ...) for one example.
pub fn evaluate_mask(
    predictor: &dyn Predictor,
    example: &Example,
    mask: &Mask,
    mode: MetricMode,
) -> Result<FidelityRecord> {
    let inputs = query_inputs(predictor, example, mask)?;
    Ok(FidelityRecord::from_inputs(
        example,
        predictor.label_space(),
        &inputs,
        mode,
    ))
}

/// Fidelity of the example's own rationale.
pub fn evaluate_example(
    predictor: &dyn Predictor,
    example: &Example,
    mode: MetricMode,
) -> Result<FidelityRecord> {
    evaluate_mask(predictor, example, &example.rationale, mode)
}

/// Evaluates every example in parallel; records come back in dataset order.
pub fn evaluate_dataset(
    predictor: &dyn Predictor,
    dataset: &Dataset,
    mode: MetricMode,
) -> Result<Vec<FidelityRecord>> {
    check_space(predictor, &dataset.label_space)?;
    dataset
        .examples
        .par_iter()
        .map(|e| evaluate_example(predictor, e, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::KeywordModel;
    use proptest::prelude::*;

    const S1: f64 = 0.7310585786300049; // sigmoid(1)

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn sufficiency_examples() {
        assert!((sufficiency(S1, S1, MetricMode::Clipped) - 1.0).abs() < 1e-12);
        assert!((sufficiency(0.9, 0.6, MetricMode::Clipped) - 0.7).abs() < 1e-12);
        assert_eq!(sufficiency(0.6, 0.9, MetricMode::Clipped), 1.0);
        assert!((sufficiency(0.6, 0.9, MetricMode::Eraser) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn comprehensiveness_examples() {
        assert!((comprehensiveness(S1, 0.5, MetricMode::Clipped) - 0.2310585786300049).abs() < 1e-12);
        assert_eq!(comprehensiveness(0.8, 0.8, MetricMode::Clipped), 0.0);
        assert_eq!(comprehensiveness(0.4, 0.7, MetricMode::Clipped), 0.0);
        assert!((comprehensiveness(0.4, 0.7, MetricMode::Eraser) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn null_difference_examples() {
        assert!((null_difference(S1, 0.5) - 0.2310585786300049).abs() < 1e-12);
        assert_eq!(null_difference(0.5, 0.5), 0.0);
        assert_eq!(null_difference(0.3, 0.6), 0.0);
    }

    #[test]
    fn normalize_examples() {
        let nd = S1 - 0.5;
        let (s, c) = normalize(1.0, nd, 1.0 - nd, nd);
        assert!((s.unwrap() - 1.0).abs() < 1e-12);
        assert!((c.unwrap() - 1.0).abs() < 1e-12);
        let (s, _) = normalize(0.8, 0.1, 0.8, 0.2);
        assert_eq!(s, Some(0.0));
        assert_eq!(normalize(1.0, 0.0, 1.0, 0.0), (None, None));
        assert_eq!(normalize(1.0, 0.0, 1.0, 9e-7), (None, None));
    }

    #[test]
    fn keyword_record() {
        let m = KeywordModel::good_bad();
        let e = Example::new("x", toks("good movie"), "pos", Mask::from_ints(&[1, 0]).unwrap());
        let r = evaluate_example(&m, &e, MetricMode::Clipped).unwrap();
        assert_eq!(r.predicted_class, "pos");
        assert!((r.suff - 1.0).abs() < 1e-12);
        assert!((r.comp - 0.2311).abs() < 1e-4);
        assert!((r.null_diff - 0.2311).abs() < 1e-4);
        assert!((r.norm_suff.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.norm_comp.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_and_empty_mask_identities() {
        let m = KeywordModel::good_bad();
        let e = Example::new("x", toks("good good bad movie"), "pos", Mask::ones(4));
        let r = evaluate_example(&m, &e, MetricMode::Clipped).unwrap();
        assert_eq!(r.suff, 1.0);
        assert_eq!(r.norm_suff, Some(1.0));
        assert_eq!(r.comp, r.null_diff);
        assert_eq!(r.norm_comp, Some(1.0));

        let r0 = evaluate_mask(&m, &e, &Mask::zeros(4), MetricMode::Clipped).unwrap();
        assert_eq!(r0.suff, 1.0 - r0.null_diff);
        assert_eq!(r0.norm_suff, Some(0.0));
        assert_eq!(r0.comp, 0.0);
        assert_eq!(r0.norm_comp, Some(0.0));
    }

    #[test]
    fn undefined_when_model_ignores_input() {
        let m = KeywordModel::good_bad();
        let e = Example::new("x", toks("plain movie"), "pos", Mask::from_ints(&[1, 0]).unwrap());
        let r = evaluate_example(&m, &e, MetricMode::Clipped).unwrap();
        assert_eq!(r.null_diff, 0.0);
        assert!(!r.is_defined());
        assert_eq!(r.norm_comp, None);
    }

    #[test]
    fn dataset_evaluation_checks_labels() {
        let m = KeywordModel::good_bad();
        let space = LabelSpace::new(["a", "b"]).unwrap();
        let ds = Dataset::new("d", space, vec![], Default::default()).unwrap();
        assert!(evaluate_dataset(&m, &ds, MetricMode::Clipped).is_err());
    }

    proptest! {
        #[test]
        fn clipped_metrics_are_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            let s = sufficiency(a, b, MetricMode::Clipped);
            let k = comprehensiveness(a, b, MetricMode::Clipped);
            let n = null_difference(a, c);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((0.0..=1.0).contains(&k));
            prop_assert!((0.0..=1.0).contains(&n));
            let (ns, nc) = normalize(s, k, sufficiency(a, c, MetricMode::Clipped), n);
            if let (Some(ns), Some(nc)) = (ns, nc) {
                prop_assert!((0.0..=1.0).contains(&ns));
                prop_assert!((0.0..=1.0).contains(&nc));
            }
        }
    }
}
