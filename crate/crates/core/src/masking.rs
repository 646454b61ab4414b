//! Mask algebra: applying rationales to token sequences, complements,
//! random occlusion and document/query flattening.
//!
//! Masking removes tokens outright. Positions flagged special survive every
//! mask, including the empty one.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{Example, Mask, QueryRationale, SEPARATOR};

fn check_len(example: &Example, mask: &Mask) -> Result<()> {
    if mask.len() != example.len() {
        return Err(Error::MaskLengthMismatch {
            expected: example.len(),
            actual: mask.len(),
        });
    }
    Ok(())
}

/// Tokens kept by `mask`: positions where the mask is 1 or the token is
/// special, in original order.
pub fn apply_mask(example: &Example, mask: &Mask) -> Result<Vec<String>> {
    check_len(example, mask)?;
    Ok(example
        .tokens
        .iter()
        .zip(mask.iter().zip(example.special.iter()))
        .filter(|(_, (m, s))| *m || *s)
        .map(|(t, _)| t.clone())
        .collect())
}

/// `1 - mask` at non-special positions; special positions keep their value.
pub fn complement(example: &Example, mask: &Mask) -> Result<Mask> {
    check_len(example, mask)?;
    Ok(mask
        .iter()
        .zip(example.special.iter())
        .map(|(m, s)| if s { m } else { !m })
        .collect::<Vec<_>>()
        .into())
}

/// The mask that keeps every token.
pub fn full_mask(example: &Example) -> Mask {
    Mask::ones(example.len())
}

/// The mask that removes every non-special token.
pub fn empty_mask(example: &Example) -> Mask {
    Mask::zeros(example.len())
}

/// Number of units removed at occlusion rate `rate` out of `m`, rounding
/// halves away from zero.
///
/// Products within 1e-9 of a half-integer are snapped to it first so that
/// rates such as `0.15` (not exactly representable) round like their
/// decimal value.
pub fn removal_count(rate: f64, m: usize) -> usize {
    let x = rate * m as f64;
    let half = (x * 2.0).round() / 2.0;
    let x = if (x - half).abs() < 1e-9 { half } else { x };
    (x.round() as usize).min(m)
}

/// What a single occlusion draw removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionUnit {
    #[default]
    Token,
    /// Whole annotated sentences; falls back to tokens for examples without
    /// sentence indices.
    Sentence,
}

/// A rationale with a random fraction of its positions zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct OccludedMask {
    pub example_id: String,
    pub rate: f64,
    pub trial: u32,
    pub mask: Mask,
    /// Number of units (tokens or sentences) zeroed.
    pub removed: usize,
}

/// Seeds the draw order for one (example, trial) pair. The rate is not part
/// of the key, so for a fixed trial the masks are nested: a higher rate
/// removes a superset of the positions removed at a lower rate.
fn draw_rng(seed: u64, example_id: &str, trial: u32, unit: OcclusionUnit) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"ratfid-occlude\0");
    h.update(seed.to_le_bytes());
    h.update((example_id.len() as u64).to_le_bytes());
    h.update(example_id.as_bytes());
    h.update(trial.to_le_bytes());
    h.update([unit as u8]);
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Zeroes `round(rate * m)` rationale units chosen uniformly without
/// replacement, where `m` counts the rationale's non-special units.
///
/// Deterministic in `(example.id, rate, trial, seed)`.
pub fn occlude(example: &Example, rate: f64, trial: u32, seed: u64) -> Result<OccludedMask> {
    occlude_units(example, rate, trial, seed, OcclusionUnit::Token)
}

pub fn occlude_units(
    example: &Example,
    rate: f64,
    trial: u32,
    seed: u64,
    unit: OcclusionUnit,
) -> Result<OccludedMask> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    let candidates: Vec<usize> = (0..example.len())
        .filter(|&i| example.rationale.get(i) && !example.special.get(i))
        .collect();

    let mut bits = example.rationale.bits().to_vec();
    let mut rng = draw_rng(seed, &example.id, trial, unit);

    let removed = match (unit, example.units.as_ref()) {
        (OcclusionUnit::Sentence, Some(units)) => {
            let mut groups: Vec<u32> = Vec::new();
            for &i in &candidates {
                if !groups.contains(&units[i]) {
                    groups.push(units[i]);
                }
            }
            groups.shuffle(&mut rng);
            let n = removal_count(rate, groups.len());
            let dropped = &groups[..n];
            for &i in &candidates {
                if dropped.contains(&units[i]) {
                    bits[i] = false;
                }
            }
            n
        }
        _ => {
            let mut order = candidates;
            order.shuffle(&mut rng);
            let n = removal_count(rate, order.len());
            for &i in &order[..n] {
                bits[i] = false;
            }
            n
        }
    };

    Ok(OccludedMask {
        example_id: example.id.clone(),
        rate,
        trial,
        mask: bits.into(),
        removed,
    })
}

/// A random rationale with as many non-special positions as the example's
/// own, for baselines. Deterministic in `(example.id, seed)`.
pub fn random_rationale(example: &Example, seed: u64) -> Mask {
    let mut h = Sha256::new();
    h.update(b"ratfid-random\0");
    h.update(seed.to_le_bytes());
    h.update(example.id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut slots: Vec<usize> = (0..example.len())
        .filter(|&i| !example.special.get(i))
        .collect();
    slots.shuffle(&mut rng);
    let mut bits = example.special.bits().to_vec();
    for &i in &slots[..example.rationale_len()] {
        bits[i] = true;
    }
    bits.into()
}

/// Output of [`flatten_doc_query`].
#[derive(Debug, Clone, PartialEq)]
pub struct Flattened {
    pub tokens: Vec<String>,
    pub mask: Mask,
    pub special: Mask,
}

/// Appends the query to the document behind a separator token.
///
/// Without an explicit query mask the query positions follow
/// `query_default`. An empty query leaves the document untouched.
pub fn flatten_doc_query(
    doc_tokens: &[String],
    doc_mask: &Mask,
    query_tokens: &[String],
    query_mask: Option<&Mask>,
    query_default: QueryRationale,
) -> Result<Flattened> {
    if doc_mask.len() != doc_tokens.len() {
        return Err(Error::MaskLengthMismatch {
            expected: doc_tokens.len(),
            actual: doc_mask.len(),
        });
    }
    if query_tokens.is_empty() {
        return Ok(Flattened {
            tokens: doc_tokens.to_vec(),
            mask: doc_mask.clone(),
            special: Mask::zeros(doc_tokens.len()),
        });
    }
    let query_mask = match query_mask {
        Some(m) if m.len() != query_tokens.len() => {
            return Err(Error::MaskLengthMismatch {
                expected: query_tokens.len(),
                actual: m.len(),
            })
        }
        Some(m) => m.clone(),
        None => match query_default {
            QueryRationale::AlwaysKept => Mask::ones(query_tokens.len()),
            QueryRationale::Unmarked => Mask::zeros(query_tokens.len()),
        },
    };

    let mut tokens = Vec::with_capacity(doc_tokens.len() + 1 + query_tokens.len());
    tokens.extend_from_slice(doc_tokens);
    tokens.push(SEPARATOR.to_string());
    tokens.extend_from_slice(query_tokens);

    // the separator is special, so its rationale bit never matters
    let mask = doc_mask.concat(&Mask::zeros(1)).concat(&query_mask);
    let mut special = vec![false; tokens.len()];
    special[doc_tokens.len()] = true;

    Ok(Flattened {
        tokens,
        mask,
        special: special.into(),
    })
}
