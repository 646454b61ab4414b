//! Fidelity curves: normalized sufficiency and comprehensiveness as a
//! growing fraction of the rationale is randomly occluded, and the
//! classification of their shapes into brevity, redundancy, irrelevance
//! and dependency.
//!
//! | property    | sufficiency | comprehensiveness |
//! |-------------|-------------|-------------------|
//! | brevity     | fast drop   | fast drop         |
//! | redundancy  | slow drop   | fast drop         |
//! | irrelevance | slow drop   | slow drop         |
//! | dependency  | fast drop   | slow drop         |

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{apply_mask, complement, empty_mask, occlude_units, OcclusionUnit};
use crate::metrics::{FidelityInputs, FidelityRecord, MetricMode, NORM_EPSILON};
use crate::predictor::{predict_dedup, Predictor};
use crate::types::{Example, LabelSpace, Mask, PredictionDistribution};

/// `0, 0.05, ..., 1.0`
pub fn default_rates() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_rates(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot parse rates {spec:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let rates: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step <= 0.0 || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step).round();
        if ((n * step) - (stop - start)).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "step {step} does not divide [{start}, {stop}]"
            )));
        }
        let n = n as usize;
        (0..=n)
            .map(|i| start + (stop - start) * i as f64 / n.max(1) as f64)
            .collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if rates.is_empty() {
        return Err(bad());
    }
    for &r in &rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidRate(r));
        }
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub rates: Vec<f64>,
    pub trials: u32,
    pub seed: u64,
    pub unit: OcclusionUnit,
    pub mode: MetricMode,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            rates: default_rates(),
            trials: 10,
            seed: 0,
            unit: OcclusionUnit::Token,
            mode: MetricMode::Clipped,
        }
    }
}

impl CurveConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.rates.is_empty() {
            return Err(Error::InvalidConfig("no occlusion rates".into()));
        }
        for &r in &self.rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidRate(r));
            }
        }
        Ok(())
    }

    /// Occluded masks for every (rate, trial) cell of one example.
    pub(crate) fn occlusions(&self, example: &Example) -> Result<Vec<Vec<Mask>>> {
        self.rates
            .iter()
            .map(|&r| {
                (0..self.trials)
                    .map(|t| occlude_units(example, r, t, self.seed, self.unit).map(|o| o.mask))
                    .collect()
            })
            .collect()
    }
}

/// Summary of one metric at one rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    /// Mean over examples of the per-example trial means.
    pub mean: Option<f64>,
    /// Population std of the per-example trial means.
    pub std: Option<f64>,
    /// Mean over examples of the within-example std across trials.
    pub trial_std: Option<f64>,
    /// Examples contributing.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub suff: CurveSummary,
    pub comp: CurveSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub points: Vec<CurvePoint>,
    pub trials: u32,
    pub seed: u64,
    pub unit: OcclusionUnit,
    pub mode: MetricMode,
    pub n_examples: usize,
    /// Examples skipped because their normalization is undefined.
    pub n_undefined_excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMetric {
    Suff,
    Comp,
}

impl CurveMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Suff => "norm_suff",
            Self::Comp => "norm_comp",
        }
    }
}

impl FidelityCurve {
    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate).collect()
    }

    pub fn point_at(&self, rate: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| (p.rate - rate).abs() < 1e-9)
    }

    /// Mean value of `metric` at `rate`, if the rate is present and some
    /// example contributed.
    pub fn value(&self, metric: CurveMetric, rate: f64) -> Option<f64> {
        let p = self.point_at(rate)?;
        match metric {
            CurveMetric::Suff => p.suff.mean,
            CurveMetric::Comp => p.comp.mean,
        }
    }
}

/// Normalized values of one example over the (rate, trial) grid, or `None`
/// when its null difference is below epsilon.
pub(crate) type ExampleCells = Option<Vec<Vec<(f64, f64)>>>;

/// Turns the per-cell model outputs of one example into normalized values
/// using the same record computation as point fidelity.
pub(crate) fn cells_from_inputs(
    example: &Example,
    space: &LabelSpace,
    full: &PredictionDistribution,
    empty: &PredictionDistribution,
    grid: Vec<Vec<(PredictionDistribution, PredictionDistribution)>>,
    mode: MetricMode,
) -> ExampleCells {
    let mut out = Vec::with_capacity(grid.len());
    for row in grid {
        let mut vals = Vec::with_capacity(row.len());
        for (rationale, complement) in row {
            let rec = FidelityRecord::from_inputs(
                example,
                space,
                &FidelityInputs {
                    full: full.clone(),
                    rationale,
                    complement,
                    empty: empty.clone(),
                },
                mode,
            );
            match (rec.norm_suff, rec.norm_comp) {
                (Some(s), Some(c)) => vals.push((s, c)),
                _ => return None,
            }
        }
        out.push(vals);
    }
    Some(out)
}

fn example_cells(
    predictor: &dyn Predictor,
    example: &Example,
    config: &CurveConfig,
) -> Result<ExampleCells> {
    let grid_masks = config.occlusions(example)?;
    let mut inputs = vec![
        example.tokens.clone(),
        apply_mask(example, &empty_mask(example))?,
    ];
    for row in &grid_masks {
        for m in row {
            inputs.push(apply_mask(example, m)?);
            inputs.push(apply_mask(example, &complement(example, m)?)?);
        }
    }
    let preds = predict_dedup(predictor, &inputs)?;
    let mut it = preds.into_iter();
    let full = it.next().expect("full");
    let empty = it.next().expect("empty");
    let grid = grid_masks
        .iter()
        .map(|row| {
            row.iter()
                .map(|_| (it.next().expect("cell"), it.next().expect("cell")))
                .collect()
        })
        .collect();
    Ok(cells_from_inputs(
        example,
        predictor.label_space(),
        &full,
        &empty,
        grid,
        config.mode,
    ))
}

/// Order-independent mean: values are summed in sorted order.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &mut [f64]) -> f64 {
    let mean = stable_mean(values);
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    stable_mean(&mut sq).sqrt()
}

fn summarize(per_example: &[Vec<f64>]) -> CurveSummary {
    if per_example.is_empty() {
        return CurveSummary {
            mean: None,
            std: None,
            trial_std: None,
            n: 0,
        };
    }
    let mut means: Vec<f64> = per_example
        .iter()
        .map(|t| stable_mean(&mut t.clone()))
        .collect();
    let mut stds: Vec<f64> = per_example
        .iter()
        .map(|t| population_std(&mut t.clone()))
        .collect();
    CurveSummary {
        mean: Some(stable_mean(&mut means.clone())),
        std: Some(population_std(&mut means)),
        trial_std: Some(stable_mean(&mut stds)),
        n: per_example.len(),
    }
}

pub(crate) fn aggregate_cells(config: &CurveConfig, cells: &[ExampleCells]) -> FidelityCurve {
    let defined: Vec<&Vec<Vec<(f64, f64)>>> = cells.iter().flatten().collect();
    let points = config
        .rates
        .iter()
        .enumerate()
        .map(|(ri, &rate)| {
            let suff: Vec<Vec<f64>> = defined
                .iter()
                .map(|g| g[ri].iter().map(|c| c.0).collect())
                .collect();
            let comp: Vec<Vec<f64>> = defined
                .iter()
                .map(|g| g[ri].iter().map(|c| c.1).collect())
                .collect();
            CurvePoint {
                rate,
                suff: summarize(&suff),
                comp: summarize(&comp),
            }
        })
        .collect();
    FidelityCurve {
        points,
        trials: config.trials,
        seed: config.seed,
        unit: config.unit,
        mode: config.mode,
        n_examples: cells.len(),
        n_undefined_excluded: cells.len() - defined.len(),
    }
}

/// Builds the fidelity curve of `examples` under `predictor`.
///
/// Every (example, rate, trial) cell occludes the rationale, then scores
/// the occluded mask and its complement. Examples are processed in
/// parallel; the result does not depend on scheduling or example order.
pub fn fidelity_curve(
    predictor: &dyn Predictor,
    examples: &[Example],
    config: &CurveConfig,
) -> Result<FidelityCurve> {
    config.validate()?;
    let cells: Vec<ExampleCells> = examples
        .par_iter()
        .map(|e| example_cells(predictor, e, config))
        .collect::<Result<_>>()?;
    Ok(aggregate_cells(config, &cells))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeThresholds {
    /// Drop statistic at or above which a curve drops fast.
    pub fast: f64,
    /// Drop statistic at or below which a curve drops slowly.
    pub slow: f64,
}

impl Default for ShapeThresholds {
    fn default() -> Self {
        Self {
            fast: 0.6,
            slow: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropSpeed {
    Fast,
    Slow,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RationaleProperty {
    Brevity,
    Redundancy,
    Irrelevance,
    Dependency,
    Indeterminate,
}

impl fmt::Display for RationaleProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Brevity => "brevity",
            Self::Redundancy => "redundancy",
            Self::Irrelevance => "irrelevance",
            Self::Dependency => "dependency",
            Self::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeVerdict {
    pub suff_drop: DropSpeed,
    pub comp_drop: DropSpeed,
    pub property: RationaleProperty,
    pub s_suff: Option<f64>,
    pub s_comp: Option<f64>,
}

/// `(F(0) - F(0.5)) / (F(0) - F(1))`; `None` when the range is below
/// epsilon. A straight line scores exactly 0.5.
pub fn drop_statistic(f0: f64, f_half: f64, f1: f64) -> Option<f64> {
    let range = f0 - f1;
    (range >= NORM_EPSILON).then(|| (f0 - f_half) / range.max(NORM_EPSILON))
}

fn speed(s: Option<f64>, t: &ShapeThresholds) -> DropSpeed {
    match s {
        Some(s) if s >= t.fast => DropSpeed::Fast,
        Some(s) if s <= t.slow => DropSpeed::Slow,
        _ => DropSpeed::Indeterminate,
    }
}

pub fn property_of(suff: DropSpeed, comp: DropSpeed) -> RationaleProperty {
    use DropSpeed::*;
    match (suff, comp) {
        (Fast, Fast) => RationaleProperty::Brevity,
        (Slow, Fast) => RationaleProperty::Redundancy,
        (Slow, Slow) => RationaleProperty::Irrelevance,
        (Fast, Slow) => RationaleProperty::Dependency,
        _ => RationaleProperty::Indeterminate,
    }
}

/// Reads the drop speed of both curves off rates 0, 0.5 and 1.
pub fn classify_shape(curve: &FidelityCurve, thresholds: &ShapeThresholds) -> Result<ShapeVerdict> {
    let get = |metric: CurveMetric, rate: f64| -> Result<f64> {
        let p = curve.point_at(rate).ok_or(Error::MissingRate(rate))?;
        let v = match metric {
            CurveMetric::Suff => p.suff.mean,
            CurveMetric::Comp => p.comp.mean,
        };
        v.ok_or(Error::DegenerateCurve)
    };
    let stat = |metric| -> Result<Option<f64>> {
        Ok(drop_statistic(get(metric, 0.0)?, get(metric, 0.5)?, get(metric, 1.0)?))
    };
    let s_suff = stat(CurveMetric::Suff)?;
    let s_comp = stat(CurveMetric::Comp)?;
    if s_suff.is_none() && s_comp.is_none() {
        return Err(Error::DegenerateCurve);
    }
    let suff_drop = speed(s_suff, thresholds);
    let comp_drop = speed(s_comp, thresholds);
    Ok(ShapeVerdict {
        suff_drop,
        comp_drop,
        property: property_of(suff_drop, comp_drop),
        s_suff,
        s_comp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate_example;
    use crate::predictor::KeywordModel;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn parses_rate_specs() {
        let r = parse_rates("0:1:0.05").unwrap();
        assert_eq!(r.len(), 21);
        assert_eq!(r, default_rates());
        assert_eq!(parse_rates("0,0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_rates("0:1:0.3").is_err());
        assert!(parse_rates("0:2:0.5").is_err());
        assert!(parse_rates("x").is_err());
    }

    #[test]
    fn zero_rate_reproduces_point_fidelity() {
        let m = KeywordModel::good_bad();
        let e = Example::new("a", toks("good good bad movie"), "pos", Mask::from_ints(&[1, 1, 0, 0]).unwrap());
        let rec = evaluate_example(&m, &e, MetricMode::Clipped).unwrap();
        let curve = fidelity_curve(&m, &[e], &CurveConfig::default()).unwrap();
        assert_eq!(curve.value(CurveMetric::Suff, 0.0), rec.norm_suff);
        assert_eq!(curve.value(CurveMetric::Comp, 0.0), rec.norm_comp);
        assert_eq!(curve.value(CurveMetric::Suff, 1.0), Some(0.0));
        assert_eq!(curve.value(CurveMetric::Comp, 1.0), Some(0.0));
    }

    #[test]
    fn keeping_one_of_two_keywords() {
        // full sigmoid(2), one kept sigmoid(1), empty sigmoid(0)
        let m = KeywordModel::good_bad();
        let e = Example::new("a", toks("good good movie"), "pos", Mask::from_ints(&[1, 1, 0]).unwrap());
        let cfg = CurveConfig {
            rates: vec![0.0, 0.5, 1.0],
            trials: 3,
            ..Default::default()
        };
        let curve = fidelity_curve(&m, &[e], &cfg).unwrap();
        let expected = (sig(1.0) - 0.5) / (sig(2.0) - 0.5);
        let got = curve.value(CurveMetric::Suff, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.6068).abs() < 1e-4);
        // every trial keeps exactly one copy, so trials agree
        assert!(curve.point_at(0.5).unwrap().suff.trial_std.unwrap() < 1e-15);
    }

    #[test]
    fn single_keyword_sufficiency_is_monotone() {
        let m = KeywordModel::good_bad();
        let e = Example::new("a", toks("good movie good"), "pos", Mask::from_ints(&[1, 0, 0]).unwrap());
        let curve = fidelity_curve(&m, &[e], &CurveConfig::default()).unwrap();
        let vals: Vec<f64> = curve.points.iter().map(|p| p.suff.mean.unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{vals:?}");
    }

    #[test]
    fn undefined_examples_are_excluded() {
        let m = KeywordModel::good_bad();
        let a = Example::new("a", toks("good movie"), "pos", Mask::from_ints(&[1, 0]).unwrap());
        let b = Example::new("b", toks("plain movie"), "pos", Mask::from_ints(&[1, 0]).unwrap());
        let curve = fidelity_curve(&m, &[a, b], &CurveConfig::default()).unwrap();
        assert_eq!(curve.n_undefined_excluded, 1);
        assert_eq!(curve.points[0].suff.n, 1);
    }

    #[test]
    fn shape_mapping() {
        use DropSpeed::*;
        assert_eq!(property_of(Fast, Fast), RationaleProperty::Brevity);
        assert_eq!(property_of(Slow, Fast), RationaleProperty::Redundancy);
        assert_eq!(property_of(Slow, Slow), RationaleProperty::Irrelevance);
        assert_eq!(property_of(Fast, Slow), RationaleProperty::Dependency);
        assert_eq!(property_of(Indeterminate, Slow), RationaleProperty::Indeterminate);
        assert_eq!(drop_statistic(1.0, 0.5, 0.0), Some(0.5));
        assert_eq!(drop_statistic(0.3, 0.3, 0.3), None);
    }

    #[test]
    fn degenerate_and_missing_rates() {
        let m = KeywordModel::good_bad();
        let e = Example::new("a", toks("good movie"), "pos", Mask::from_ints(&[1, 0]).unwrap());
        let cfg = CurveConfig {
            rates: vec![0.0, 1.0],
            ..Default::default()
        };
        let curve = fidelity_curve(&m, std::slice::from_ref(&e), &cfg).unwrap();
        assert!(matches!(
            classify_shape(&curve, &ShapeThresholds::default()),
            Err(Error::MissingRate(_))
        ));
        // an empty rationale gives flat zero curves
        let flat = Example::new("b", toks("good movie"), "pos", Mask::zeros(2));
        let curve = fidelity_curve(&m, &[flat], &CurveConfig::default()).unwrap();
        assert!(matches!(
            classify_shape(&curve, &ShapeThresholds::default()),
            Err(Error::DegenerateCurve)
        ));
    }

    #[test]
    fn zero_trials_rejected() {
        let m = KeywordModel::good_bad();
        let cfg = CurveConfig {
            trials: 0,
            ..Default::default()
        };
        assert!(fidelity_curve(&m, &[], &cfg).is_err());
    }
}
