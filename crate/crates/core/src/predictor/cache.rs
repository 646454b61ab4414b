use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::predictor::adapter::WireResponse;
use crate::predictor::plan::PredictionRequest;
use crate::predictor::Predictor;
use crate::types::{LabelSpace, PredictionDistribution};

/// Stable key of one masked input: hash of example id, variant tag and
/// the masked token sequence (128 bits, hex).
pub fn request_key(example_id: &str, tag: &str, tokens: &[String]) -> String {
    let mut h = Sha256::new();
    for part in [example_id, tag] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update((tokens.len() as u64).to_le_bytes());
    for t in tokens {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Stored predictions keyed by request key. Lookups are exact: a missing
/// key is an error, never a recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCache {
    space: LabelSpace,
    entries: HashMap<String, PredictionDistribution>,
}

impl PredictionCache {
    pub fn new(space: LabelSpace) -> Self {
        Self {
            space,
            entries: HashMap::new(),
        }
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: String, dist: PredictionDistribution) {
        self.entries.insert(key, dist);
    }

    pub fn remove(&mut self, key: &str) -> Option<PredictionDistribution> {
        self.entries.remove(key)
    }

    pub fn get(&self, key: &str) -> Result<&PredictionDistribution> {
        self.entries.get(key).ok_or_else(|| Error::CacheMiss {
            keys: vec![key.to_string()],
        })
    }

    pub fn try_get(&self, key: &str) -> Option<&PredictionDistribution> {
        self.entries.get(key)
    }

    /// Answers every request with `predictor`, in batches of `batch_size`.
    pub fn fill(
        predictor: &dyn Predictor,
        requests: &[PredictionRequest],
        batch_size: usize,
    ) -> Result<Self> {
        let mut cache = Self::new(predictor.label_space().clone());
        for chunk in requests.chunks(batch_size.max(1)) {
            let inputs: Vec<Vec<String>> = chunk.iter().map(|r| r.tokens.clone()).collect();
            let preds = predictor.predict_batch(&inputs)?;
            if preds.len() != chunk.len() {
                return Err(Error::ProtocolViolation(format!(
                    "asked for {} predictions, got {}",
                    chunk.len(),
                    preds.len()
                )));
            }
            for (r, p) in chunk.iter().zip(preds) {
                cache.insert(r.key.clone(), p);
            }
        }
        Ok(cache)
    }

    /// Reads response lines (`{"id": key, "probs": {..}}`). Error records
    /// and invalid distributions are rejected with their line number.
    pub fn load(path: &Path, space: LabelSpace) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut cache = Self::new(space);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: WireResponse =
                serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
            if let Some(msg) = rec.error {
                return Err(parse_err(lineno, format!("error record: {msg}")));
            }
            let id = rec.id.ok_or_else(|| parse_err(lineno, "missing id".into()))?;
            let probs = rec.probs.ok_or_else(|| parse_err(lineno, "missing probs".into()))?;
            let dist = PredictionDistribution::from_map(&cache.space, &probs)
                .map_err(|e| parse_err(lineno, e.to_string()))?;
            cache.insert(id, dist);
        }
        Ok(cache)
    }

    /// Writes one response line per entry, sorted by key.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let sorted: BTreeMap<&String, &PredictionDistribution> = self.entries.iter().collect();
        for (key, dist) in sorted {
            let rec = WireResponse {
                id: Some(key.clone()),
                probs: Some(dist.to_map(&self.space)),
                error: None,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Resolves request keys against a cache, collecting every miss so the
/// caller can report them all at once.
pub(crate) struct Lookup<'a> {
    cache: &'a PredictionCache,
    missing: Vec<String>,
}

impl<'a> Lookup<'a> {
    pub(crate) fn new(cache: &'a PredictionCache) -> Self {
        Self {
            cache,
            missing: Vec::new(),
        }
    }

    pub(crate) fn get(&mut self, key: &str) -> Option<PredictionDistribution> {
        match self.cache.try_get(key) {
            Some(d) => Some(d.clone()),
            None => {
                if !self.missing.iter().any(|k| k == key) {
                    self.missing.push(key.to_string());
                }
                None
            }
        }
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.missing.is_empty() {
            Ok(())
        } else {
            Err(Error::CacheMiss { keys: self.missing })
        }
    }
}
