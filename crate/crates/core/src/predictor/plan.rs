//! Two-phase evaluation for models that run outside the harness.
//!
//! [`plan_requests`] lists every masked input an analysis will query, each
//! under a stable request key. The user answers them offline (or through
//! an adapter) into a [`PredictionCache`]; [`score_from_cache`] then replays
//! the same plan and computes the analysis from cached distributions.
//!
//! Within one example, identical masked sequences share one request; the
//! key carries the tag of the first variant (in plan order) producing it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::curves::{aggregate_cells, cells_from_inputs, CurveConfig, FidelityCurve};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, complement, empty_mask};
use crate::metrics::{FidelityInputs, FidelityRecord, MetricMode};
use crate::predictor::cache::{request_key, Lookup, PredictionCache};
use crate::types::{Dataset, Example, PredictionDistribution};

/// Which analysis the requests are for.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricPlan {
    /// Full, rationale, complement and empty input per example.
    PointFidelity,
    /// Point fidelity plus an occluded rationale and its complement for
    /// every (rate, trial) cell.
    Curve(CurveConfig),
    /// Full and rationale-only test inputs.
    Regimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    /// Request key; the adapter protocol's `id`.
    #[serde(rename = "id")]
    pub key: String,
    #[serde(skip)]
    pub example_id: String,
    #[serde(skip)]
    pub tag: String,
    pub tokens: Vec<String>,
}

pub const TAG_FULL: &str = "full";
pub const TAG_RATIONALE: &str = "rationale";
pub const TAG_COMPLEMENT: &str = "complement";
pub const TAG_EMPTY: &str = "empty";

fn occluded_tag(side: &str, rate: f64, trial: u32) -> String {
    format!("occluded:{rate}:{trial}:{side}")
}

/// Every (tag, masked tokens) pair the plan needs for one example, in
/// canonical order.
fn variants(example: &Example, plan: &MetricPlan) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = vec![
        (TAG_FULL.to_string(), example.tokens.clone()),
        (TAG_RATIONALE.to_string(), apply_mask(example, &example.rationale)?),
    ];
    if matches!(plan, MetricPlan::Regimes) {
        return Ok(out);
    }
    out.push((
        TAG_COMPLEMENT.to_string(),
        apply_mask(example, &complement(example, &example.rationale)?)?,
    ));
    out.push((TAG_EMPTY.to_string(), apply_mask(example, &empty_mask(example))?));
    if let MetricPlan::Curve(cfg) = plan {
        let grid = cfg.occlusions(example)?;
        for (&rate, row) in cfg.rates.iter().zip(&grid) {
            for (trial, mask) in row.iter().enumerate() {
                let trial = trial as u32;
                out.push((occluded_tag(TAG_RATIONALE, rate, trial), apply_mask(example, mask)?));
                out.push((
                    occluded_tag(TAG_COMPLEMENT, rate, trial),
                    apply_mask(example, &complement(example, mask)?)?,
                ));
            }
        }
    }
    Ok(out)
}

/// The deduplicated requests of one example and the key serving each tag.
struct ExamplePlan {
    requests: Vec<PredictionRequest>,
    key_of: HashMap<String, String>,
}

fn plan_example(example: &Example, plan: &MetricPlan) -> Result<ExamplePlan> {
    let mut by_tokens: HashMap<Vec<String>, String> = HashMap::new();
    let mut requests = Vec::new();
    let mut key_of = HashMap::new();
    for (tag, tokens) in variants(example, plan)? {
        let key = match by_tokens.get(&tokens) {
            Some(k) => k.clone(),
            None => {
                let key = request_key(&example.id, &tag, &tokens);
                by_tokens.insert(tokens.clone(), key.clone());
                requests.push(PredictionRequest {
                    key: key.clone(),
                    example_id: example.id.clone(),
                    tag: tag.clone(),
                    tokens,
                });
                key
            }
        };
        key_of.insert(tag, key);
    }
    Ok(ExamplePlan { requests, key_of })
}

fn validate(plan: &MetricPlan) -> Result<()> {
    match plan {
        MetricPlan::Curve(cfg) => cfg.validate(),
        _ => Ok(()),
    }
}

/// Lists the requests `plan` needs over `dataset`, grouped by example in
/// dataset order.
pub fn plan_requests(dataset: &Dataset, plan: &MetricPlan) -> Result<Vec<PredictionRequest>> {
    validate(plan)?;
    let mut out = Vec::new();
    for e in &dataset.examples {
        out.extend(plan_example(e, plan)?.requests);
    }
    Ok(out)
}

/// Request keys of the full and rationale-only input of each example.
pub(crate) fn regime_keys(dataset: &Dataset) -> Result<Vec<(String, String)>> {
    dataset
        .examples
        .iter()
        .map(|e| {
            let p = plan_example(e, &MetricPlan::Regimes)?;
            Ok((p.key_of[TAG_FULL].clone(), p.key_of[TAG_RATIONALE].clone()))
        })
        .collect()
}

/// Results of replaying a plan against a cache.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredAnalysis {
    pub records: Vec<FidelityRecord>,
    pub curve: Option<FidelityCurve>,
}

/// Replays `plan` over `dataset`, reading every distribution from `cache`.
///
/// Fails with [`Error::CacheMiss`] listing every absent key.
pub fn score_from_cache(
    dataset: &Dataset,
    plan: &MetricPlan,
    cache: &PredictionCache,
    mode: MetricMode,
) -> Result<ScoredAnalysis> {
    validate(plan)?;
    if cache.label_space() != &dataset.label_space {
        return Err(Error::InvalidConfig(
            "cache and dataset label spaces differ".into(),
        ));
    }
    if matches!(plan, MetricPlan::Regimes) {
        return Err(Error::InvalidConfig(
            "regime caches are scored by regimes::run_regimes".into(),
        ));
    }
    let space = &dataset.label_space;
    let mut lookup = Lookup::new(cache);
    let mut records = Vec::with_capacity(dataset.len());
    let mut cells = Vec::new();

    for e in &dataset.examples {
        let p = plan_example(e, plan)?;
        let mut get = |tag: &str| -> Option<PredictionDistribution> { lookup.get(&p.key_of[tag]) };
        let full = get(TAG_FULL);
        let rationale = get(TAG_RATIONALE);
        let comp = get(TAG_COMPLEMENT);
        let empty = get(TAG_EMPTY);

        let grid: Option<Vec<Vec<_>>> = match plan {
            MetricPlan::Curve(cfg) => {
                let mut grid = Vec::with_capacity(cfg.rates.len());
                let mut complete = true;
                for &rate in &cfg.rates {
                    let mut row = Vec::with_capacity(cfg.trials as usize);
                    for t in 0..cfg.trials {
                        let r = get(&occluded_tag(TAG_RATIONALE, rate, t));
                        let c = get(&occluded_tag(TAG_COMPLEMENT, rate, t));
                        match (r, c) {
                            (Some(r), Some(c)) => row.push((r, c)),
                            _ => complete = false,
                        }
                    }
                    grid.push(row);
                }
                complete.then_some(grid)
            }
            _ => None,
        };

        if let (Some(full), Some(rationale), Some(complement), Some(empty)) =
            (full, rationale, comp, empty)
        {
            records.push(FidelityRecord::from_inputs(
                e,
                space,
                &FidelityInputs {
                    full: full.clone(),
                    rationale,
                    complement,
                    empty: empty.clone(),
                },
                mode,
            ));
            if let Some(grid) = grid {
                cells.push(cells_from_inputs(e, space, &full, &empty, grid, mode));
            }
        }
    }
    lookup.finish()?;

    let curve = match plan {
        MetricPlan::Curve(cfg) => {
            let cfg = CurveConfig { mode, ..cfg.clone() };
            Some(aggregate_cells(&cfg, &cells))
        }
        _ => None,
    };
    Ok(ScoredAnalysis { records, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate_dataset;
    use crate::predictor::{KeywordModel, Predictor};
    use crate::types::{Granularity, LabelSpace, Mask};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn one(tokens: &str, rationale: &[i64]) -> Dataset {
        Dataset::new(
            "d",
            LabelSpace::new(["neg", "pos"]).unwrap(),
            vec![Example::new("e", toks(tokens), "pos", Mask::from_ints(rationale).unwrap())],
            Granularity::Token,
        )
        .unwrap()
    }

    #[test]
    fn point_plan_has_four_requests() {
        let reqs = plan_requests(&one("a b c", &[1, 1, 0]), &MetricPlan::PointFidelity).unwrap();
        assert_eq!(reqs.len(), 4);
        let tags: Vec<&str> = reqs.iter().map(|r| r.tag.as_str()).collect();
        assert_eq!(tags, [TAG_FULL, TAG_RATIONALE, TAG_COMPLEMENT, TAG_EMPTY]);
    }

    #[test]
    fn curve_plan_dedups_endpoints() {
        let ds = one("a b c", &[1, 1, 0]);
        let cfg = CurveConfig {
            rates: vec![0.0, 0.5, 1.0],
            trials: 2,
            ..Default::default()
        };
        // oracle: enumerate every masked sequence and count distinct ones
        let e = &ds.examples[0];
        let mut distinct: Vec<Vec<String>> = vec![
            toks("a b c"),
            toks("a b"),
            toks("c"),
            vec![],
        ];
        for row in cfg.occlusions(e).unwrap() {
            for m in row {
                for seq in [
                    apply_mask(e, &m).unwrap(),
                    apply_mask(e, &complement(e, &m).unwrap()).unwrap(),
                ] {
                    if !distinct.contains(&seq) {
                        distinct.push(seq);
                    }
                }
            }
        }
        let reqs = plan_requests(&ds, &MetricPlan::Curve(cfg)).unwrap();
        assert_eq!(reqs.len(), distinct.len());
        // r = 0.5 with two trials yields one or two (mask, complement) pairs
        assert!(reqs.len() == 6 || reqs.len() == 8, "{}", reqs.len());
        assert!(reqs[4..].iter().all(|r| r.tag.contains(":0.5:")));
    }

    #[test]
    fn empty_dataset_has_no_requests() {
        let ds = Dataset::new("d", LabelSpace::new(["a", "b"]).unwrap(), vec![], Granularity::Token)
            .unwrap();
        assert!(plan_requests(&ds, &MetricPlan::PointFidelity).unwrap().is_empty());
    }

    #[test]
    fn cache_round_trip_matches_live() {
        let m = KeywordModel::good_bad();
        let ds = one("good bad good movie", &[1, 0, 1, 0]);
        let plan = MetricPlan::PointFidelity;
        let reqs = plan_requests(&ds, &plan).unwrap();
        let cache = PredictionCache::fill(&m, &reqs, 3).unwrap();
        let scored = score_from_cache(&ds, &plan, &cache, MetricMode::Clipped).unwrap();
        assert_eq!(scored.records, evaluate_dataset(&m, &ds, MetricMode::Clipped).unwrap());
        assert!(scored.curve.is_none());
        assert_eq!(m.label_space(), cache.label_space());
    }

    #[test]
    fn missing_entries_are_all_reported() {
        let m = KeywordModel::good_bad();
        let ds = one("good bad movie", &[1, 0, 0]);
        let plan = MetricPlan::PointFidelity;
        let reqs = plan_requests(&ds, &plan).unwrap();
        let mut cache = PredictionCache::fill(&m, &reqs, 8).unwrap();
        cache.remove(&reqs[2].key);
        cache.remove(&reqs[3].key);
        match score_from_cache(&ds, &plan, &cache, MetricMode::Clipped) {
            Err(Error::CacheMiss { keys }) => {
                assert_eq!(keys, vec![reqs[2].key.clone(), reqs[3].key.clone()])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn request_lines_use_protocol_shape() {
        let reqs = plan_requests(&one("a b", &[1, 0]), &MetricPlan::PointFidelity).unwrap();
        let line = serde_json::to_string(&reqs[0]).unwrap();
        assert_eq!(line, format!(r#"{{"id":"{}","tokens":["a","b"]}}"#, reqs[0].key));
    }
}
