//! Domain types shared by every analysis: label spaces, binary masks,
//! examples, prediction distributions and datasets.
//!
//! Everything here is immutable once validated and is `Send + Sync`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::masking;

/// Probability vectors must sum to one within this tolerance.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Token inserted between a document and its query when flattening.
pub const SEPARATOR: &str = "[SEP]";

/// Ordered, duplicate-free set of class names.
///
/// The order is significant: it breaks argmax ties and fixes the column
/// order of every emitted table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidLabelSpace(format!(
                "need at least two labels, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() {
                return Err(Error::InvalidLabelSpace("empty label name".into()));
            }
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidLabelSpace(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(d)?;
        LabelSpace::new(labels).map_err(serde::de::Error::custom)
    }
}

/// A binary mask over a token sequence. Serialized as an array of 0/1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    /// Builds a mask from integer flags, rejecting anything but 0 and 1.
    pub fn from_ints(values: &[i64]) -> Result<Self> {
        values
            .iter()
            .enumerate()
            .map(|(position, &value)| match value {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::NonBinaryMask { position, value }),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn to_ints(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }

    pub fn concat(&self, other: &Mask) -> Mask {
        let mut bits = self.0.clone();
        bits.extend_from_slice(&other.0);
        Mask(bits)
    }
}

impl From<Vec<bool>> for Mask {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if *b { "1" } else { "0" })?;
        }
        f.write_str("]")
    }
}

impl Serialize for Mask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_ints().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ints = Vec::<i64>::deserialize(d)?;
        Mask::from_ints(&ints).map_err(serde::de::Error::custom)
    }
}

/// Which split of a dataset an example belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[serde(alias = "val", alias = "validation")]
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// How query positions are marked when a document/query example carries a
/// rationale over the document only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryRationale {
    /// The query is always-present context and belongs to every rationale.
    #[default]
    AlwaysKept,
    /// The query is not part of the rationale unless annotated.
    Unmarked,
}

/// One classification instance with its rationale.
///
/// `tokens` is the flattened sequence the model sees: the document, then
/// (for document/query tasks) a separator followed by the query. The
/// rationale and special flags are aligned to that flattened sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub doc_len: usize,
    pub gold_label: String,
    pub rationale: Mask,
    pub special: Mask,
    /// Sentence index per token, used for sentence-unit occlusion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<u32>>,
    /// False when the source carried no rationale annotation at all.
    #[serde(default = "default_true")]
    pub annotated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

fn default_true() -> bool {
    true
}

impl Example {
    /// A single-text example with no special tokens.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        gold_label: impl Into<String>,
        rationale: Mask,
    ) -> Self {
        let n = tokens.len();
        Self {
            id: id.into(),
            doc_len: n,
            tokens,
            gold_label: gold_label.into(),
            rationale,
            special: Mask::zeros(n),
            units: None,
            annotated: true,
            split: None,
        }
    }

    /// A document/query example flattened into `doc ++ [SEP] ++ query`.
    pub fn with_query(
        id: impl Into<String>,
        doc_tokens: Vec<String>,
        doc_mask: Mask,
        query_tokens: Vec<String>,
        query_mask: Option<Mask>,
        query_default: QueryRationale,
        gold_label: impl Into<String>,
    ) -> Result<Self> {
        let doc_len = doc_tokens.len();
        let flat = masking::flatten_doc_query(
            &doc_tokens,
            &doc_mask,
            &query_tokens,
            query_mask.as_ref(),
            query_default,
        )?;
        Ok(Self {
            id: id.into(),
            tokens: flat.tokens,
            doc_len,
            gold_label: gold_label.into(),
            rationale: flat.mask,
            special: flat.special,
            units: None,
            annotated: true,
            split: None,
        })
    }

    pub fn with_special(mut self, special: Mask) -> Self {
        self.special = special;
        self
    }

    pub fn with_units(mut self, units: Vec<u32>) -> Self {
        self.units = Some(units);
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn doc_tokens(&self) -> &[String] {
        &self.tokens[..self.doc_len]
    }

    /// Query tokens, if the example was flattened from a document/query pair.
    pub fn query_tokens(&self) -> Option<&[String]> {
        (self.tokens.len() > self.doc_len).then(|| &self.tokens[self.doc_len + 1..])
    }

    /// Number of rationale positions that are not special.
    pub fn rationale_len(&self) -> usize {
        self.rationale
            .iter()
            .zip(self.special.iter())
            .filter(|(r, s)| *r && !*s)
            .count()
    }

    /// Number of positions that are not special.
    pub fn maskable_len(&self) -> usize {
        self.special.iter().filter(|s| !*s).count()
    }
}

/// Checks every [`Example`] invariant against `space` and hands the example
/// back unchanged.
pub fn validate_example(example: Example, space: &LabelSpace) -> Result<Example> {
    check_example(&example, space)?;
    Ok(example)
}

pub(crate) fn check_example(example: &Example, space: &LabelSpace) -> Result<()> {
    let n = example.tokens.len();
    if example.rationale.len() != n {
        return Err(Error::MaskLengthMismatch {
            expected: n,
            actual: example.rationale.len(),
        });
    }
    if example.special.len() != n {
        return Err(Error::MaskLengthMismatch {
            expected: n,
            actual: example.special.len(),
        });
    }
    if example.doc_len > n || (example.doc_len < n && example.doc_len + 1 >= n) {
        return Err(Error::InvalidConfig(format!(
            "example {:?}: document length {} inconsistent with {} tokens",
            example.id, example.doc_len, n
        )));
    }
    if example.doc_len < n && !example.special.get(example.doc_len) {
        return Err(Error::InvalidConfig(format!(
            "example {:?}: separator at position {} is not flagged special",
            example.id, example.doc_len
        )));
    }
    if let Some(units) = &example.units {
        if units.len() != n {
            return Err(Error::MaskLengthMismatch {
                expected: n,
                actual: units.len(),
            });
        }
    }
    if !space.contains(&example.gold_label) {
        return Err(Error::UnknownLabel(example.gold_label.clone()));
    }
    Ok(())
}

/// A probability vector over a label space, stored in label-space order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    probs: Vec<f64>,
}

impl PredictionDistribution {
    pub fn new(space: &LabelSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.len() {
            return Err(Error::InvalidDistribution(format!(
                "expected {} probabilities, got {}",
                space.len(),
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for (label, &p) in space.labels().iter().zip(&probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidDistribution(format!(
                    "probability {p} for {label:?} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    /// Builds a distribution from a label → probability map whose keys must
    /// be exactly the label space.
    pub fn from_map(space: &LabelSpace, map: &BTreeMap<String, f64>) -> Result<Self> {
        if map.len() != space.len() {
            return Err(Error::InvalidDistribution(format!(
                "expected labels {:?}, got {:?}",
                space.labels(),
                map.keys().collect::<Vec<_>>()
            )));
        }
        let probs = space
            .labels()
            .iter()
            .map(|l| {
                map.get(l).copied().ok_or_else(|| {
                    Error::InvalidDistribution(format!("missing probability for {l:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, probs)
    }

    /// Softmax of raw scores. Always a valid distribution for finite input.
    pub fn softmax(scores: &[f64]) -> Self {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Self {
            probs: exps.into_iter().map(|e| e / z).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Index of the most probable class; ties go to the earliest label.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn to_map(&self, space: &LabelSpace) -> BTreeMap<String, f64> {
        space
            .labels()
            .iter()
            .cloned()
            .zip(self.probs.iter().copied())
            .collect()
    }
}

/// Annotation granularity of a dataset's rationales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Token,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub label_space: LabelSpace,
    pub examples: Vec<Example>,
    #[serde(default)]
    pub granularity: Granularity,
}

impl Dataset {
    /// Validates every example and the uniqueness of ids.
    pub fn new(
        name: impl Into<String>,
        label_space: LabelSpace,
        examples: Vec<Example>,
        granularity: Granularity,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            check_example(ex, &label_space)?;
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            label_space,
            examples,
            granularity,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// A dataset with the same metadata holding only the selected examples.
    pub fn filtered<F>(&self, mut keep: F) -> Dataset
    where
        F: FnMut(&Example) -> bool,
    {
        Dataset {
            name: self.name.clone(),
            label_space: self.label_space.clone(),
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
            granularity: self.granularity,
        }
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.filtered(|e| e.split == Some(split))
    }

    /// Label-space index of every gold label, in example order.
    pub fn gold_indices(&self) -> Vec<usize> {
        self.examples
            .iter()
            .map(|e| {
                self.label_space
                    .index_of(&e.gold_label)
                    .expect("validated dataset")
            })
            .collect()
    }
}
