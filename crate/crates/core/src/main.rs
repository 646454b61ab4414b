use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ratfid::curves::{classify_shape, fidelity_curve, parse_rates, CurveConfig, ShapeThresholds};
use ratfid::ingest::{load_dataset, write_simple_jsonl, DatasetFormat, LoadOptions};
use ratfid::masking::OcclusionUnit;
use ratfid::metrics::{evaluate_dataset, FidelityRecord, MetricMode};
use ratfid::predictor::{
    plan_requests, score_from_cache, train_builtin, ExecAdapter, HttpAdapter, LinearModel,
    MetricPlan, PredictionCache, Predictor, PredictorSpec, TrainConfig,
};
use ratfid::regimes::{run_regimes, RegimeCaches, RegimeSource, Splits};
use ratfid::report::{aggregate, emit, Artifact, GroupBy, OutputFormat};
use ratfid::{Dataset, LabelSpace, Split};

#[derive(Parser)]
#[command(name = "ratfid", version, about = "Fidelity analysis of extractive rationales")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point sufficiency and comprehensiveness, aggregated per group.
    Evaluate(EvaluateArgs),
    /// Fidelity curves under random rationale occlusion.
    Curves(CurvesArgs),
    /// Accuracy under the three rationale regimes.
    Regimes(RegimesArgs),
    /// List the prediction requests an analysis needs.
    Plan(PlanArgs),
    /// Compute an analysis from a filled prediction cache.
    Score(ScoreArgs),
    /// Convert sentiment treebank trees into the simple format.
    IngestSst(IngestSstArgs),
    /// Re-aggregate saved per-example records.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Simple,
    Eraser,
    Sst,
}

impl From<FormatArg> for DatasetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Simple => Self::Simple,
            FormatArg::Eraser => Self::Eraser,
            FormatArg::Sst => Self::Sst,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset file or directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "simple")]
    format: FormatArg,
    /// Label order, comma separated; inferred from the data when absent.
    #[arg(long)]
    labels: Option<String>,
    /// Split to analyse; defaults to test when the data has one.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

#[derive(Args)]
struct ModelArgs {
    /// builtin:logreg | builtin:<model.json> | exec:<cmd> | http:<url> | cache:<path>
    #[arg(long, default_value = "builtin:logreg")]
    predictor: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Requests per adapter batch.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Save the trained builtin model here.
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Clipped,
    Eraser,
}

impl From<ModeArg> for MetricMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Clipped => Self::Clipped,
            ModeArg::Eraser => Self::Eraser,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Dataset,
    PredClass,
    GoldClass,
}

impl From<GroupArg> for GroupBy {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Dataset => Self::Dataset,
            GroupArg::PredClass => Self::PredClass,
            GroupArg::GoldClass => Self::GoldClass,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitArg {
    Token,
    Sentence,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; guessed from the extension when absent.
    #[arg(long, value_enum)]
    out_format: Option<OutFormatArg>,
}

#[derive(Args)]
struct CurveArgs {
    /// Occlusion rates as start:stop:step or a comma list.
    #[arg(long, default_value = "0:1:0.05")]
    rates: String,
    #[arg(long, default_value_t = 10)]
    trials: u32,
    #[arg(long, value_enum, default_value = "token")]
    unit: UnitArg,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "clipped")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "pred-class")]
    group_by: GroupArg,
    #[command(flatten)]
    out: OutArgs,
    /// Also write per-example records as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Score each prediction cache matching this glob (one per snapshot).
    #[arg(long)]
    snapshots: Option<String>,
}

#[derive(Args)]
struct CurvesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "clipped")]
    mode: ModeArg,
    #[command(flatten)]
    curve: CurveArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RegimesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Caches for no-rationale, eval-rationale and train-eval-rationale.
    #[arg(long, num_args = 3)]
    caches: Option<Vec<PathBuf>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisArg {
    Point,
    Curve,
    Regimes,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "point")]
    analysis: AnalysisArg,
    #[command(flatten)]
    curve: CurveArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Request file (JSON lines); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Answer the requests with this predictor and write a cache.
    #[arg(long)]
    fill_with: Option<String>,
    #[arg(long, requires = "fill_with")]
    cache_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, value_enum, default_value = "point")]
    analysis: AnalysisArg,
    #[command(flatten)]
    curve: CurveArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "clipped")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "pred-class")]
    group_by: GroupArg,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct IngestSstArgs {
    /// Directory with train/dev/test.txt, or one tree file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-example records written by `evaluate --records`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value = "dataset")]
    name: String,
    #[arg(long, value_enum, default_value = "pred-class")]
    group_by: GroupArg,
    #[command(flatten)]
    out: OutArgs,
}

fn load(data: &DataArgs) -> anyhow::Result<Dataset> {
    let opts = LoadOptions {
        label_space: data
            .labels
            .as_deref()
            .map(|l| LabelSpace::new(l.split(',').map(str::trim)))
            .transpose()?,
        ..Default::default()
    };
    load_dataset(&data.dataset, data.format.into(), &opts)
        .with_context(|| format!("loading {}", data.dataset.display()))
}

fn analysed(dataset: &Dataset, split: Option<SplitArg>) -> Dataset {
    let pick = |s| dataset.split(s);
    match split {
        Some(SplitArg::Train) => pick(Split::Train),
        Some(SplitArg::Dev) => pick(Split::Dev),
        Some(SplitArg::Test) => pick(Split::Test),
        Some(SplitArg::All) => dataset.clone(),
        None => {
            let test = pick(Split::Test);
            if test.is_empty() {
                dataset.clone()
            } else {
                test
            }
        }
    }
}

/// Training data for the builtin model: the train split when the dataset
/// has one, everything otherwise.
fn training(dataset: &Dataset) -> Dataset {
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        dataset.clone()
    } else {
        train
    }
}

fn build_predictor(
    spec: &PredictorSpec,
    dataset: &Dataset,
    model: &ModelArgs,
) -> anyhow::Result<Box<dyn Predictor>> {
    let space = dataset.label_space.clone();
    Ok(match spec {
        PredictorSpec::BuiltinLogreg => {
            let m = train_builtin(&training(dataset), &TrainConfig::default(), false, model.seed)?;
            if let Some(p) = &model.save_model {
                m.save(p)?;
            }
            Box::new(m)
        }
        PredictorSpec::BuiltinModel(path) => Box::new(LinearModel::load(Path::new(path))?),
        PredictorSpec::Exec(cmd) => Box::new(ExecAdapter::spawn(cmd, space, model.batch_size)?),
        PredictorSpec::Http(url) => Box::new(HttpAdapter::new(url, space, model.batch_size)?),
        PredictorSpec::Cache(_) => bail!("cache predictors are read through score_from_cache"),
    })
}

fn out_format(out: &OutArgs) -> OutputFormat {
    match (out.out_format, &out.out) {
        (Some(OutFormatArg::Csv), _) => OutputFormat::Csv,
        (Some(OutFormatArg::Json), _) => OutputFormat::Json,
        (None, Some(p)) => OutputFormat::from_path(p),
        (None, None) => OutputFormat::Csv,
    }
}

fn write_artifact(artifact: Artifact<'_>, out: &OutArgs) -> anyhow::Result<()> {
    let format = out_format(out);
    match &out.out {
        Some(p) => emit(artifact, format, p)?,
        None => std::io::stdout().write_all(&ratfid::report::render(artifact, format)?)?,
    }
    Ok(())
}

fn write_records(records: &[FidelityRecord], path: &Path) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_records(path: &Path) -> anyhow::Result<Vec<FidelityRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(
                serde_json::from_str(&line)
                    .with_context(|| format!("{}:{}", path.display(), i + 1))?,
            );
        }
    }
    Ok(out)
}

fn curve_config(args: &CurveArgs, seed: u64, mode: MetricMode) -> anyhow::Result<CurveConfig> {
    Ok(CurveConfig {
        rates: parse_rates(&args.rates)?,
        trials: args.trials,
        seed,
        unit: match args.unit {
            UnitArg::Token => OcclusionUnit::Token,
            UnitArg::Sentence => OcclusionUnit::Sentence,
        },
        mode,
    })
}

fn metric_plan(
    analysis: AnalysisArg,
    curve: &CurveArgs,
    seed: u64,
    mode: MetricMode,
) -> anyhow::Result<MetricPlan> {
    Ok(match analysis {
        AnalysisArg::Point => MetricPlan::PointFidelity,
        AnalysisArg::Curve => MetricPlan::Curve(curve_config(curve, seed, mode)?),
        AnalysisArg::Regimes => MetricPlan::Regimes,
    })
}

/// The examples an analysis runs on: the regimes plan covers annotated
/// test examples, the others the selected split.
fn plan_scope(dataset: &Dataset, analysis: AnalysisArg, split: Option<SplitArg>) -> anyhow::Result<Dataset> {
    Ok(match analysis {
        AnalysisArg::Regimes => Splits::from_dataset(dataset)?.test,
        _ => analysed(dataset, split),
    })
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let dataset = load(&args.data)?;
    let eval = analysed(&dataset, args.data.split);
    let mode: MetricMode = args.mode.into();
    let group_by: GroupBy = args.group_by.into();

    let mut reports = Vec::new();
    let mut all_records = Vec::new();
    if let Some(pattern) = &args.snapshots {
        let mut paths: Vec<PathBuf> = glob::glob(pattern)?.collect::<Result<_, _>>()?;
        paths.sort();
        if paths.is_empty() {
            bail!("no snapshot caches match {pattern:?}");
        }
        for p in paths {
            let cache = PredictionCache::load(&p, eval.label_space.clone())?;
            let scored = score_from_cache(&eval, &MetricPlan::PointFidelity, &cache, mode)
                .with_context(|| format!("scoring snapshot {}", p.display()))?;
            let name = format!("{}@{}", eval.name, p.display());
            reports.extend(aggregate(&name, &scored.records, group_by));
            all_records.extend(scored.records);
        }
    } else {
        let spec: PredictorSpec = args.model.predictor.parse()?;
        let records = match &spec {
            PredictorSpec::Cache(path) => {
                let cache = PredictionCache::load(Path::new(path), eval.label_space.clone())?;
                score_from_cache(&eval, &MetricPlan::PointFidelity, &cache, mode)?.records
            }
            _ => {
                let predictor = build_predictor(&spec, &dataset, &args.model)?;
                evaluate_dataset(predictor.as_ref(), &eval, mode)?
            }
        };
        reports = aggregate(&eval.name, &records, group_by);
        all_records = records;
    }
    if let Some(p) = &args.records {
        write_records(&all_records, p)?;
    }
    write_artifact(Artifact::Reports(&reports), &args.out)
}

fn curves(args: CurvesArgs) -> anyhow::Result<()> {
    let dataset = load(&args.data)?;
    let eval = analysed(&dataset, args.data.split);
    let config = curve_config(&args.curve, args.model.seed, args.mode.into())?;
    let spec: PredictorSpec = args.model.predictor.parse()?;
    let curve = match &spec {
        PredictorSpec::Cache(path) => {
            let cache = PredictionCache::load(Path::new(path), eval.label_space.clone())?;
            score_from_cache(&eval, &MetricPlan::Curve(config.clone()), &cache, config.mode)?
                .curve
                .expect("curve plan yields a curve")
        }
        _ => {
            let predictor = build_predictor(&spec, &dataset, &args.model)?;
            fidelity_curve(predictor.as_ref(), &eval.examples, &config)?
        }
    };
    write_artifact(Artifact::Curve(&curve), &args.out)?;
    match classify_shape(&curve, &ShapeThresholds::default()) {
        Ok(v) => eprintln!(
            "shape: sufficiency {:?} (s={}), comprehensiveness {:?} (s={}) => {}",
            v.suff_drop,
            fmt_opt(v.s_suff),
            v.comp_drop,
            fmt_opt(v.s_comp),
            v.property
        ),
        Err(e) => eprintln!("shape: {e}"),
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".into(), |v| format!("{v:.6}"))
}

fn regimes(args: RegimesArgs) -> anyhow::Result<()> {
    let dataset = load(&args.data)?;
    let splits = Splits::from_dataset(&dataset)?;
    let result = match &args.caches {
        Some(paths) => {
            let space = dataset.label_space.clone();
            let load = |p: &PathBuf| PredictionCache::load(p, space.clone());
            let (a, b, c) = (load(&paths[0])?, load(&paths[1])?, load(&paths[2])?);
            let caches = RegimeCaches {
                no_rationale: &a,
                eval_rationale: &b,
                train_eval_rationale: &c,
            };
            run_regimes(&splits, &RegimeSource::Caches(caches), args.seed)?
        }
        None => {
            let mut config = TrainConfig::default();
            if let Some(e) = args.epochs {
                config.epochs = e;
            }
            run_regimes(&splits, &RegimeSource::Builtin(config), args.seed)?
        }
    };
    write_artifact(Artifact::Regimes(std::slice::from_ref(&result)), &args.out)
}

fn plan(args: PlanArgs) -> anyhow::Result<()> {
    let dataset = load(&args.data)?;
    let scope = plan_scope(&dataset, args.analysis, args.data.split)?;
    let plan = metric_plan(args.analysis, &args.curve, args.seed, MetricMode::Clipped)?;
    let requests = plan_requests(&scope, &plan)?;

    let mut buf = Vec::new();
    for r in &requests {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    match &args.out {
        Some(p) => std::fs::write(p, &buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }

    if let (Some(spec), Some(cache_out)) = (&args.fill_with, &args.cache_out) {
        let spec: PredictorSpec = spec.parse()?;
        let model = ModelArgs {
            predictor: spec.to_string(),
            seed: args.seed,
            batch_size: 64,
            save_model: None,
        };
        let predictor = build_predictor(&spec, &dataset, &model)?;
        PredictionCache::fill(predictor.as_ref(), &requests, 64)?.save(cache_out)?;
    }
    eprintln!("{} requests", requests.len());
    Ok(())
}

fn score(args: ScoreArgs) -> anyhow::Result<()> {
    let dataset = load(&args.data)?;
    let mode: MetricMode = args.mode.into();
    let scope = plan_scope(&dataset, args.analysis, args.data.split)?;
    let plan = metric_plan(args.analysis, &args.curve, args.seed, mode)?;
    let cache = PredictionCache::load(&args.cache, dataset.label_space.clone())?;
    if let MetricPlan::Regimes = plan {
        bail!("score regimes with `regimes --caches`");
    }
    let scored = score_from_cache(&scope, &plan, &cache, mode)?;
    match &scored.curve {
        Some(curve) => write_artifact(Artifact::Curve(curve), &args.out),
        None => {
            let reports = aggregate(&scope.name, &scored.records, args.group_by.into());
            write_artifact(Artifact::Reports(&reports), &args.out)
        }
    }
}

fn ingest_sst(args: IngestSstArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.dataset, DatasetFormat::Sst, &LoadOptions::default())?;
    write_simple_jsonl(&dataset, &args.out)?;
    eprintln!("{} examples", dataset.len());
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let records = read_records(&args.records)?;
    let reports = aggregate(&args.name, &records, args.group_by.into());
    write_artifact(Artifact::Reports(&reports), &args.out)
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Evaluate(a) => evaluate(a),
        Command::Curves(a) => curves(a),
        Command::Regimes(a) => regimes(a),
        Command::Plan(a) => plan(a),
        Command::Score(a) => score(a),
        Command::IngestSst(a) => ingest_sst(a),
        Command::Report(a) => report(a),
    }
}
