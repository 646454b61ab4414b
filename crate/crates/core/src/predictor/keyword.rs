use std::collections::BTreeMap;

use crate::error::Result;
use crate::predictor::{Predictor, PredictorKind};
use crate::types::{LabelSpace, PredictionDistribution};

/// Binary analytic model: `p(positive) = sigmoid(bias + sum of token weights)`.
///
/// Tokens without a weight contribute nothing, so the empty input scores
/// `sigmoid(bias)`. With the default `good`/`bad` weights this is the
/// closed-form oracle used throughout the tests, and the reference model of
/// the adapter protocol.
#[derive(Debug, Clone)]
pub struct KeywordModel {
    space: LabelSpace,
    weights: BTreeMap<String, f64>,
    bias: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl KeywordModel {
    /// `negative` is the first label of the space, `positive` the second.
    pub fn new(
        negative: &str,
        positive: &str,
        weights: impl IntoIterator<Item = (String, f64)>,
        bias: f64,
    ) -> Result<Self> {
        Ok(Self {
            space: LabelSpace::new([negative, positive])?,
            weights: weights.into_iter().collect(),
            bias,
        })
    }

    /// `good` scores +1 and `bad` scores -1 over labels `neg`, `pos`.
    pub fn good_bad() -> Self {
        Self::new(
            "neg",
            "pos",
            [("good".to_string(), 1.0), ("bad".to_string(), -1.0)],
            0.0,
        )
        .expect("static label space")
    }

    pub fn logit(&self, tokens: &[String]) -> f64 {
        self.bias
            + tokens
                .iter()
                .filter_map(|t| self.weights.get(t))
                .sum::<f64>()
    }

    pub fn p_positive(&self, tokens: &[String]) -> f64 {
        sigmoid(self.logit(tokens))
    }
}

impl Predictor for KeywordModel {
    fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::Builtin
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDistribution>> {
        inputs
            .iter()
            .map(|t| {
                let p = self.p_positive(t);
                PredictionDistribution::new(&self.space, vec![1.0 - p, p])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn good_movie_is_sigmoid_one() {
        let m = KeywordModel::good_bad();
        let d = m
            .predict(&["good".to_string(), "movie".to_string()])
            .unwrap();
        assert!((d.prob(1) - 0.7310585786300049).abs() < 1e-12);
        assert!((d.prob(0) - 0.2689414213699951).abs() < 1e-12);
        assert_eq!(m.predict(&[]).unwrap().probs(), &[0.5, 0.5]);
    }
}
