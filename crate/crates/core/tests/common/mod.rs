//! Models and data generators shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use ratfid::error::Result;
use ratfid::predictor::{Predictor, PredictorKind};
use ratfid::{Dataset, Example, Granularity, LabelSpace, Mask, PredictionDistribution, Split};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// An arbitrary but deterministic model: the distribution is a random
/// softmax seeded by the token sequence.
pub struct HashModel {
    pub space: LabelSpace,
    pub salt: u64,
}

impl HashModel {
    pub fn new(k: usize, salt: u64) -> Self {
        let labels: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        Self {
            space: LabelSpace::new(labels).unwrap(),
            salt,
        }
    }
}

impl Predictor for HashModel {
    fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::Builtin
    }

    fn predict_batch(&self, inputs: &[Vec<String>]) -> Result<Vec<PredictionDistribution>> {
        Ok(inputs
            .iter()
            .map(|t| {
                let mut h = Sha256::new();
                h.update(self.salt.to_le_bytes());
                for tok in t {
                    h.update(tok.as_bytes());
                    h.update([0]);
                }
                let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
                let scores: Vec<f64> = (0..self.space.len()).map(|_| rng.gen_range(-4.0..4.0)).collect();
                PredictionDistribution::softmax(&scores)
            })
            .collect())
    }
}

/// Binary model with `p(pos) = sigmoid(logit(tokens))` over labels neg, pos.
pub struct FnModel<F> {
    pub space: LabelSpace,
    pub logit: F,
}

impl<F: Fn(&[String]) -> f64 + Send + Sync> FnModel<F> {
    pub fn new(logit: F) -> Self {
        Self {
            space: LabelSpace::new(["neg", "pos"]).unwrap(),
            logit,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<F: Fn(&[String]) -> f64 + Send + Sync> Predictor for FnModel<F> {
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
                let p = sigmoid((self.logit)(t));
                PredictionDistribution::new(&self.space, vec![1.0 - p, p])
            })
            .collect()
    }
}

pub fn count(tokens: &[String], word: &str) -> usize {
    tokens.iter().filter(|t| *t == word).count()
}

/// Random examples over a small vocabulary with random masks.
pub fn random_examples(n: usize, space: &LabelSpace, seed: u64) -> Vec<Example> {
    let vocab = ["a", "b", "c", "d", "e", "f", "g", "h"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(0..12);
            let tokens: Vec<String> = (0..len)
                .map(|_| vocab.choose(&mut rng).unwrap().to_string())
                .collect();
            let mask = Mask::new((0..len).map(|_| rng.gen_bool(0.4)).collect());
            let label = space.label(rng.gen_range(0..space.len())).to_string();
            Example::new(format!("r{i}"), tokens, label, mask)
        })
        .collect()
}

/// Sentiment-like data where rationale tokens carry all label signal and
/// the rest is label-independent noise.
///
/// Each example has 1 to 4 cue words marked as rationale, each drawn from
/// the other class with probability `confusion`, plus 6 to 12 noise words
/// shared by both classes.
pub fn signal_dataset(n_train: usize, n_dev: usize, n_test: usize, confusion: f64, seed: u64) -> Dataset {
    let pos = ["great", "superb", "lovely", "moving", "fun"];
    let neg = ["awful", "dull", "boring", "weak", "messy"];
    let noise: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::new();
    let splits = [(Split::Train, n_train), (Split::Dev, n_dev), (Split::Test, n_test)];
    for (split, n) in splits {
        for i in 0..n {
            let positive = rng.gen_bool(0.5);
            let (own, other) = if positive { (&pos, &neg) } else { (&neg, &pos) };
            let cues: Vec<String> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let side = if rng.gen_bool(confusion) { other } else { own };
                    side.choose(&mut rng).unwrap().to_string()
                })
                .collect();
            let mut items: Vec<(String, bool)> = cues.into_iter().map(|c| (c, true)).collect();
            for _ in 0..rng.gen_range(6..=12) {
                items.push((noise.choose(&mut rng).unwrap().clone(), false));
            }
            items.shuffle(&mut rng);
            let (tokens, bits): (Vec<String>, Vec<bool>) = items.into_iter().unzip();
            let label = if positive { "pos" } else { "neg" };
            examples.push(
                Example::new(format!("{}-{i}", split.as_str()), tokens, label, Mask::new(bits)).with_split(split),
            );
        }
    }
    Dataset::new("signal", LabelSpace::new(["neg", "pos"]).unwrap(), examples, Granularity::Token).unwrap()
}

/// The same dataset with every rationale set to the whole input.
pub fn with_full_rationales(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for e in &mut out.examples {
        e.rationale = Mask::ones(e.len());
    }
    out
}
