//! Multinomial logistic regression over bag-of-words counts, trained with
//! full-batch gradient descent and L2 regularization.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::apply_mask;
use crate::predictor::{Predictor, PredictorKind};
use crate::types::{Dataset, LabelSpace, PredictionDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 strength on the weights (the bias is not penalized).
    pub l2: f64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
    /// Candidate L2 strengths tried on a development split, if one is given.
    #[serde(default)]
    pub l2_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 300,
            l2: 1e-4,
            init_scale: 0.01,
            l2_grid: vec![1e-5, 1e-4, 1e-3, 1e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    label_space: LabelSpace,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// `weights[class][feature]`
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    config: TrainConfig,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    labels: LabelSpace,
    vocabulary: Vec<String>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    config: TrainConfig,
    seed: u64,
}

type SparseRow = Vec<(usize, f64)>;

impl LinearModel {
    /// A model with all-zero weights over an empty vocabulary.
    pub fn zeros(label_space: LabelSpace) -> Self {
        let k = label_space.len();
        Self {
            label_space,
            vocab: Vec::new(),
            index: HashMap::new(),
            weights: vec![Vec::new(); k],
            bias: vec![0.0; k],
            config: TrainConfig::default(),
            seed: 0,
        }
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn featurize(&self, tokens: &[String]) -> SparseRow {
        let mut ids: Vec<usize> = tokens.iter().filter_map(|t| self.index.get(t).copied()).collect();
        ids.sort_unstable();
        let mut counts: SparseRow = Vec::with_capacity(ids.len());
        for j in ids {
            match counts.last_mut() {
                Some((i, c)) if *i == j => *c += 1.0,
                _ => counts.push((j, 1.0)),
            }
        }
        counts
    }

    fn scores(&self, row: &[(usize, f64)]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + row.iter().map(|&(j, x)| w[j] * x).sum::<f64>())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            labels: self.label_space.clone(),
            vocabulary: self.vocab.clone(),
            weights: self.weights.clone(),
            bias: self.bias.clone(),
            config: self.config.clone(),
            seed: self.seed,
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let k = file.labels.len();
        if file.bias.len() != k
            || file.weights.len() != k
            || file.weights.iter().any(|w| w.len() != file.vocabulary.len())
        {
            return Err(Error::InvalidConfig(format!(
                "{}: weight shapes do not match labels and vocabulary",
                path.display()
            )));
        }
        let index = file
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            label_space: file.labels,
            vocab: file.vocabulary,
            index,
            weights: file.weights,
            bias: file.bias,
            config: file.config,
            seed: file.seed,
        })
    }
}

impl Predictor for LinearModel {
    fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::Builtin
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDistribution>> {
        Ok(inputs
            .iter()
            .map(|t| PredictionDistribution::softmax(&self.scores(&self.featurize(t))))
            .collect())
    }
}

/// Trains the builtin model on `dataset`. When `use_rationale_mask` is set
/// every training input is reduced to its rationale first.
///
/// Training is a deterministic function of its arguments. The bias starts at
/// the centered log class priors, so the untrained model already predicts
/// the majority class.
pub fn train_builtin(
    dataset: &Dataset,
    config: &TrainConfig,
    use_rationale_mask: bool,
    seed: u64,
) -> Result<LinearModel> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.learning_rate <= 0.0 || config.l2 < 0.0 {
        return Err(Error::InvalidConfig(
            "learning rate must be positive and l2 non-negative".into(),
        ));
    }
    let space = dataset.label_space.clone();
    let k = space.len();

    let inputs: Vec<Vec<String>> = dataset
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
    let targets = dataset.gold_indices();

    let mut vocab: Vec<String> = inputs.iter().flatten().cloned().collect();
    vocab.sort_unstable();
    vocab.dedup();
    let index: HashMap<String, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let d = vocab.len();

    let mut priors = vec![0.0; k];
    for &y in &targets {
        priors[y] += 1.0;
    }
    let n = targets.len() as f64;
    // smoothed log priors keep absent classes finite
    let logp: Vec<f64> = priors.iter().map(|c| ((c + 0.5) / (n + 0.5 * k as f64)).ln()).collect();
    let mean = logp.iter().sum::<f64>() / k as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if config.init_scale > 0.0 {
                        rng.gen_range(-config.init_scale..config.init_scale)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut model = LinearModel {
        label_space: space,
        vocab,
        index,
        weights,
        bias: logp.iter().map(|l| l - mean).collect(),
        config: config.clone(),
        seed,
    };

    let rows: Vec<SparseRow> = inputs.iter().map(|t| model.featurize(t)).collect();
    let mut grad_w = vec![vec![0.0; d]; k];
    let mut grad_b = vec![0.0; k];
    for _ in 0..config.epochs {
        for g in grad_w.iter_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        grad_b.iter_mut().for_each(|v| *v = 0.0);

        for (row, &y) in rows.iter().zip(&targets) {
            let p = PredictionDistribution::softmax(&model.scores(row));
            for c in 0..k {
                let err = p.prob(c) - if c == y { 1.0 } else { 0.0 };
                grad_b[c] += err;
                for &(j, x) in row {
                    grad_w[c][j] += err * x;
                }
            }
        }

        let lr = config.learning_rate;
        for c in 0..k {
            model.bias[c] -= lr * grad_b[c] / n;
            for (w, g) in model.weights[c].iter_mut().zip(&grad_w[c]) {
                *w -= lr * (g / n + config.l2 * *w);
            }
        }
    }
    Ok(model)
}
