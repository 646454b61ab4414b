//! Aggregation and report emission.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::curves::{CurveMetric, CurveSummary, FidelityCurve};
use crate::error::{Error, Result};
use crate::metrics::FidelityRecord;
use crate::regimes::{Accuracy, Provenance, RegimeResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupBy {
    Dataset,
    /// Fidelity is defined with respect to the predicted class, so this is
    /// the default.
    #[default]
    PredClass,
    GoldClass,
}

impl GroupBy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dataset => "dataset",
            Self::PredClass => "pred-class",
            Self::GoldClass => "gold-class",
        }
    }
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(Self::Dataset),
            "pred-class" | "predicted-class" => Ok(Self::PredClass),
            "gold-class" => Ok(Self::GoldClass),
            other => Err(Error::InvalidConfig(format!("unknown grouping {other:?}"))),
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metrics summarized per group, in report order.
pub const REPORT_METRICS: [&str; 5] = ["suff", "comp", "null_diff", "norm_suff", "norm_comp"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    /// Values included (undefined ones are left out).
    pub n: usize,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dataset: String,
    pub group_by: GroupBy,
    pub group: String,
    /// Records in the group, defined or not.
    pub n: usize,
    /// Records whose normalized metrics are undefined.
    pub n_undefined_excluded: usize,
    /// Keyed by the names in [`REPORT_METRICS`].
    pub metrics: BTreeMap<String, MetricStats>,
}

impl AggregateReport {
    pub fn stats(&self, metric: &str) -> Option<&MetricStats> {
        self.metrics.get(metric)
    }
}

/// Quantile by linear interpolation between closest ranks of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn describe(mut values: Vec<f64>) -> MetricStats {
    if values.is_empty() {
        return MetricStats {
            n: 0,
            mean: None,
            std: None,
            min: None,
            q1: None,
            median: None,
            q3: None,
            max: None,
        };
    }
    // sorting first makes every sum independent of record order
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    MetricStats {
        n: values.len(),
        mean: Some(mean),
        std: Some((sq.iter().sum::<f64>() / n).sqrt()),
        min: Some(values[0]),
        q1: Some(quantile(&values, 0.25)),
        median: Some(quantile(&values, 0.5)),
        q3: Some(quantile(&values, 0.75)),
        max: Some(values[values.len() - 1]),
    }
}

fn metric_value(r: &FidelityRecord, metric: &str) -> Option<f64> {
    match metric {
        "suff" => Some(r.suff),
        "comp" => Some(r.comp),
        "null_diff" => Some(r.null_diff),
        "norm_suff" => r.norm_suff,
        "norm_comp" => r.norm_comp,
        _ => None,
    }
}

/// Summarizes `records` per group. Undefined normalized values are left
/// out of the normalized statistics and counted. Groups are ordered by key.
pub fn aggregate(dataset: &str, records: &[FidelityRecord], group_by: GroupBy) -> Vec<AggregateReport> {
    let mut groups: BTreeMap<String, Vec<&FidelityRecord>> = BTreeMap::new();
    for r in records {
        let key = match group_by {
            GroupBy::Dataset => dataset.to_string(),
            GroupBy::PredClass => r.predicted_class.clone(),
            GroupBy::GoldClass => r.gold_label.clone(),
        };
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(group, rs)| AggregateReport {
            dataset: dataset.to_string(),
            group_by,
            group,
            n: rs.len(),
            n_undefined_excluded: rs.iter().filter(|r| !r.is_defined()).count(),
            metrics: REPORT_METRICS
                .iter()
                .map(|&m| {
                    let vals = rs.iter().filter_map(|r| metric_value(r, m)).collect();
                    (m.to_string(), describe(vals))
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidConfig(format!("unknown output format {other:?}"))),
        }
    }
}

impl OutputFormat {
    /// Guesses from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

/// Anything [`emit`] can write.
#[derive(Debug, Clone, Copy)]
pub enum Artifact<'a> {
    Records(&'a [FidelityRecord]),
    Reports(&'a [AggregateReport]),
    Curve(&'a FidelityCurve),
    Regimes(&'a [RegimeResult]),
}

#[derive(Debug, Clone)]
enum Cell {
    Text(String),
    Int(u64),
    Float(Option<f64>),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(Some(x)) => format!("{x:.6}"),
            Cell::Float(None) => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(i) => Value::Number((*i).into()),
            Cell::Float(Some(x)) => {
                // round through the 6-decimal text so JSON and CSV agree
                let r: f64 = format!("{x:.6}").parse().expect("formatted float");
                Number::from_f64(r).map_or(Value::Null, Value::Number)
            }
            Cell::Float(None) => Value::Null,
        }
    }
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

fn text(s: impl Into<String>) -> Cell {
    Cell::Text(s.into())
}

fn records_table(records: &[FidelityRecord]) -> Table {
    Table {
        header: vec![
            "id",
            "gold_label",
            "predicted_class",
            "p_full",
            "p_rationale",
            "p_complement",
            "p_empty",
            "suff",
            "comp",
            "null_diff",
            "norm_suff",
            "norm_comp",
            "mode",
        ],
        rows: records
            .iter()
            .map(|r| {
                vec![
                    text(&r.id),
                    text(&r.gold_label),
                    text(&r.predicted_class),
                    Cell::Float(Some(r.p_full)),
                    Cell::Float(Some(r.p_rationale)),
                    Cell::Float(Some(r.p_complement)),
                    Cell::Float(Some(r.p_empty)),
                    Cell::Float(Some(r.suff)),
                    Cell::Float(Some(r.comp)),
                    Cell::Float(Some(r.null_diff)),
                    Cell::Float(r.norm_suff),
                    Cell::Float(r.norm_comp),
                    text(r.mode.to_string()),
                ]
            })
            .collect(),
    }
}

fn reports_table(reports: &[AggregateReport]) -> Table {
    let mut rows = Vec::new();
    for rep in reports {
        for m in REPORT_METRICS {
            let s = &rep.metrics[m];
            rows.push(vec![
                text(&rep.dataset),
                text(rep.group_by.as_str()),
                text(&rep.group),
                text(m),
                Cell::Int(rep.n as u64),
                Cell::Int(rep.n_undefined_excluded as u64),
                Cell::Int(s.n as u64),
                Cell::Float(s.mean),
                Cell::Float(s.std),
                Cell::Float(s.min),
                Cell::Float(s.q1),
                Cell::Float(s.median),
                Cell::Float(s.q3),
                Cell::Float(s.max),
            ]);
        }
    }
    Table {
        header: vec![
            "dataset",
            "group_by",
            "group",
            "metric",
            "n",
            "n_undefined_excluded",
            "n_included",
            "mean",
            "std",
            "min",
            "q1",
            "median",
            "q3",
            "max",
        ],
        rows,
    }
}

fn curve_table(curve: &FidelityCurve) -> Table {
    let mut rows = Vec::new();
    for metric in [CurveMetric::Suff, CurveMetric::Comp] {
        for p in &curve.points {
            let s: &CurveSummary = match metric {
                CurveMetric::Suff => &p.suff,
                CurveMetric::Comp => &p.comp,
            };
            rows.push(vec![
                Cell::Float(Some(p.rate)),
                text(metric.as_str()),
                Cell::Float(s.mean),
                Cell::Float(s.std),
                Cell::Int(s.n as u64),
            ]);
        }
    }
    Table {
        header: vec!["rate", "metric", "mean", "std", "n"],
        rows,
    }
}

fn regimes_table(results: &[RegimeResult]) -> Table {
    let mut rows = Vec::new();
    for r in results {
        let provenance = match r.provenance {
            Provenance::BuiltinTrained => "builtin-trained",
            Provenance::CacheSupplied => "cache-supplied",
        };
        let regimes: [(&str, &Accuracy); 3] = [
            ("no-rationale", &r.no_rationale),
            ("eval-rationale", &r.eval_rationale),
            ("train-eval-rationale", &r.train_eval_rationale),
        ];
        for (name, acc) in regimes {
            rows.push(vec![
                text(&r.dataset),
                text(provenance),
                text(name),
                text("all"),
                Cell::Int(acc.n as u64),
                Cell::Int(acc.correct as u64),
                Cell::Float(Some(acc.accuracy)),
            ]);
            for c in &acc.per_class {
                rows.push(vec![
                    text(&r.dataset),
                    text(provenance),
                    text(name),
                    text(&c.label),
                    Cell::Int(c.n as u64),
                    Cell::Int(c.correct as u64),
                    Cell::Float(c.accuracy),
                ]);
            }
        }
    }
    Table {
        header: vec!["dataset", "provenance", "regime", "class", "n", "correct", "accuracy"],
        rows,
    }
}

fn table_of(artifact: Artifact<'_>) -> Table {
    match artifact {
        Artifact::Records(r) => records_table(r),
        Artifact::Reports(r) => reports_table(r),
        Artifact::Curve(c) => curve_table(c),
        Artifact::Regimes(r) => regimes_table(r),
    }
}

/// Renders `artifact` with a fixed column order and floats at six decimal
/// places. Identical inputs give identical bytes.
pub fn render(artifact: Artifact<'_>, format: OutputFormat) -> Result<Vec<u8>> {
    let table = table_of(artifact);
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&table.header).map_err(csv_err)?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::csv)).map_err(csv_err)?;
            }
            w.into_inner()
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
        }
        OutputFormat::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = table
                        .header
                        .iter()
                        .zip(row)
                        .map(|(h, c)| (h.to_string(), c.json()))
                        .collect();
                    Value::Object(obj)
                })
                .collect();
            let mut out = serde_json::to_vec_pretty(&Value::Array(rows))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Writes `artifact` to `path`.
pub fn emit(artifact: Artifact<'_>, format: OutputFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render(artifact, format)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricMode;
    use proptest::prelude::*;

    fn rec(id: &str, pred: &str, gold: &str, ns: Option<f64>) -> FidelityRecord {
        FidelityRecord {
            id: id.into(),
            gold_label: gold.into(),
            predicted_class: pred.into(),
            p_full: 0.9,
            p_rationale: 0.8,
            p_complement: 0.3,
            p_empty: 0.5,
            suff: 0.9,
            comp: 0.6,
            null_diff: if ns.is_some() { 0.4 } else { 0.0 },
            norm_suff: ns,
            norm_comp: ns,
            mode: MetricMode::Clipped,
        }
    }

    #[test]
    fn mean_of_two() {
        let r = aggregate("d", &[rec("a", "p", "p", Some(0.2)), rec("b", "p", "p", Some(0.8))], GroupBy::Dataset);
        let s = r[0].stats("norm_suff").unwrap();
        assert!((s.mean.unwrap() - 0.5).abs() < 1e-12);
        assert!((s.median.unwrap() - 0.5).abs() < 1e-12);
        assert!((s.q1.unwrap() - 0.35).abs() < 1e-12);
        assert!((s.std.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn undefined_values_are_counted_not_averaged() {
        let r = aggregate("d", &[rec("a", "p", "p", Some(0.4)), rec("b", "p", "p", None)], GroupBy::Dataset);
        assert_eq!(r[0].n, 2);
        assert_eq!(r[0].n_undefined_excluded, 1);
        let s = r[0].stats("norm_comp").unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.mean, Some(0.4));
        assert_eq!(r[0].stats("suff").unwrap().n, 2);
    }

    #[test]
    fn groups_by_predicted_and_gold_class() {
        let rs = [
            rec("a", "pos", "neg", Some(0.1)),
            rec("b", "neg", "neg", Some(0.3)),
            rec("c", "pos", "pos", Some(0.5)),
        ];
        let by_pred = aggregate("d", &rs, GroupBy::PredClass);
        assert_eq!(by_pred.len(), 2);
        assert_eq!(by_pred[0].group, "neg");
        assert!((by_pred[1].stats("norm_suff").unwrap().mean.unwrap() - 0.3).abs() < 1e-12);
        let by_gold = aggregate("d", &rs, GroupBy::GoldClass);
        assert!((by_gold[0].stats("norm_suff").unwrap().mean.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_reports_give_header_only() {
        let out = render(Artifact::Reports(&[]), OutputFormat::Csv).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "dataset,group_by,group,metric,n,n_undefined_excluded,n_included,mean,std,min,q1,median,q3,max\n"
        );
        let out = render(Artifact::Reports(&[]), OutputFormat::Json).unwrap();
        assert_eq!(out, b"[]\n");
    }

    #[test]
    fn emission_is_stable() {
        let rs = [rec("a", "pos", "neg", Some(1.0 / 3.0)), rec("b", "neg", "neg", None)];
        let reps = aggregate("d", &rs, GroupBy::PredClass);
        let dir = tempfile::tempdir().unwrap();
        for fmt in [OutputFormat::Csv, OutputFormat::Json] {
            let p1 = dir.path().join("a");
            let p2 = dir.path().join("b");
            emit(Artifact::Reports(&reps), fmt, &p1).unwrap();
            emit(Artifact::Reports(&reps), fmt, &p2).unwrap();
            assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
        let csv = String::from_utf8(render(Artifact::Records(&rs), OutputFormat::Csv).unwrap()).unwrap();
        assert!(csv.lines().nth(1).unwrap().contains(",0.333333,0.333333,clipped"));
        assert!(csv.lines().nth(2).unwrap().ends_with(",,,clipped"));
    }

    fn arb_records() -> impl Strategy<Value = Vec<FidelityRecord>> {
        prop::collection::vec(
            (0usize..3, 0usize..3, prop::option::weighted(0.8, 0.0..1.0f64)),
            1..40,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (p, g, ns))| {
                    let labels = ["a", "b", "c"];
                    rec(&i.to_string(), labels[p], labels[g], ns)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn aggregation_ignores_record_order(rs in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = rs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for g in [GroupBy::Dataset, GroupBy::PredClass, GroupBy::GoldClass] {
                prop_assert_eq!(aggregate("d", &rs, g), aggregate("d", &shuffled, g));
            }
        }

        #[test]
        fn class_means_recombine_to_dataset_mean(rs in arb_records()) {
            let all = aggregate("d", &rs, GroupBy::Dataset);
            let all = all[0].stats("norm_suff").unwrap();
            let by_class = aggregate("d", &rs, GroupBy::PredClass);
            let mut weighted = 0.0;
            let mut n = 0;
            for r in &by_class {
                let s = r.stats("norm_suff").unwrap();
                if let Some(m) = s.mean {
                    weighted += m * s.n as f64;
                    n += s.n;
                }
            }
            prop_assert_eq!(n, all.n);
            if let Some(m) = all.mean {
                prop_assert!((weighted / n as f64 - m).abs() < 1e-9);
            }
        }
    }
}
