//! Command-line pipeline for Beta-mixture forecast calibration: generate
//! synthetic datasets, train the calibrator, evaluate checkpoints (with
//! optional classical baselines), and report ground-truth parameter
//! recovery.
//!
//! Every command is a pure function of its input files, flags, and seed:
//! identical invocations produce byte-identical outputs, and each output
//! directory gets a `run.json` recording the resolved configuration.
//!
//! Exit codes: 0 success, 1 usage error, 2 data validation failure,
//! 3 numerical failure.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use betacal::baselines::{fit_binning, fit_isotonic, fit_platt, CalibrationMap};
use betacal::beta::{BetaMixture, BetaParams, Histogram};
use betacal::dataset::{self, ForecastRecord, Source};
use betacal::error::Error as LibError;
use betacal::losses::LossWeights;
use betacal::metrics;
use betacal::model::{Calibrator, CalibratorInput, Optimizer, TrainConfig, TrainExample};
use betacal::synthetic::{self, CorruptionSpec, GenConfig, Regime};

const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_NUMERICAL: i32 = 3;

/// Offset applied to `--seed` for the corruption/retention stream, so the
/// transforms draw independently of generation and a transformed dataset
/// keeps exactly the features and outcomes of its clean counterpart.
const TRANSFORM_STREAM: u64 = 0x5eed_0f0f_5eed_0f0f;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(LibError),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(LibError::NonFiniteLoss { .. }) | CliError::Lib(LibError::Numerical(_)) => {
                EXIT_NUMERICAL
            }
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "betacal",
    version,
    about = "Distributional calibration of binary-event forecasts with Beta mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic forecasting dataset (JSONL).
    Gen(GenArgs),
    /// Train the Beta-mixture calibrator on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the raw initial forecasts) on a split.
    Eval(EvalArgs),
    /// Report per-regime ground-truth recovery on synthetic data.
    Recover(RecoverArgs),
}

/// How to carve fit/evaluation portions out of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SplitKind {
    /// Seeded 80/20 split; training and evaluation with the same seed see
    /// complementary portions.
    Random,
    /// Partition by resolve date (train/validation/test date ranges).
    Temporal,
    /// No split: use the whole file.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum LossKind {
    /// Outcome cross-entropy only.
    Binary,
    /// Crowd-histogram KL only.
    Human,
    /// Both terms, equally weighted.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum BaselineKind {
    Platt,
    Isotonic,
    Binning,
}

fn parse_corruption(s: &str) -> Result<CorruptionSpec, String> {
    let (kind, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KIND=VALUE, got '{s}'"))?;
    let value: f64 = value
        .parse()
        .map_err(|_| format!("'{value}' is not a number"))?;
    let spec = match kind {
        "noise" => CorruptionSpec::Noise(value),
        "directional" => CorruptionSpec::Directional(value),
        "additive" => CorruptionSpec::Additive(value),
        other => {
            return Err(format!(
                "unknown corruption '{other}' (expected noise, directional, or additive)"
            ))
        }
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn parse_retention(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !f.is_finite() || !(f > 0.0 && f <= 1.0) {
        return Err(format!("retention fraction must lie in (0, 1], got {f}"));
    }
    Ok(f)
}

#[derive(Args, Serialize)]
struct GenArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    output: PathBuf,
    /// Number of questions.
    #[arg(long, default_value_t = 30_000)]
    n: usize,
    /// Simulated forecasters per question.
    #[arg(long, default_value_t = 1000)]
    forecasters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Forecast corruption (repeatable, applied in order):
    /// noise=RHO, directional=GAMMA, or additive=DELTA.
    #[arg(long = "corrupt", value_name = "KIND=VALUE", value_parser = parse_corruption)]
    corrupt: Vec<CorruptionSpec>,
    /// Keep only this fraction of each question's forecasts.
    #[arg(long, value_parser = parse_retention)]
    retain: Option<f64>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Dataset file (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    output: PathBuf,
    /// Drives the split, the parameter initialization, and the shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which loss terms to train with: weights (1,0), (0,1), or (1,1).
    #[arg(long, value_enum, default_value_t = LossKind::Both)]
    loss: LossKind,
    /// Explicit binary-loss weight; overrides the --loss mapping.
    #[arg(long)]
    lambda_binary: Option<f64>,
    /// Explicit histogram-loss weight; overrides the --loss mapping.
    #[arg(long)]
    lambda_human: Option<f64>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Mixture components predicted per input.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Hidden layer width.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
    optimizer: OptimizerKind,
    /// Split carved from the input; training sees the non-held-out part.
    #[arg(long, value_enum, default_value_t = SplitKind::Random)]
    split: SplitKind,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Dataset file (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Trained checkpoint; omit to evaluate the raw initial forecasts.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    output: PathBuf,
    /// Must match the seed of the training run whose held-out data this is.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation happens on the held-out part of this split.
    #[arg(long, value_enum, default_value_t = SplitKind::Random)]
    split: SplitKind,
    /// Calibration bins for ECE and the reliability table.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Rolling-window size for the uncertainty curve.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Also fit a classical recalibration map on the fit split and
    /// evaluate it on the same held-out data.
    #[arg(long, value_enum)]
    baseline: Option<BaselineKind>,
}

#[derive(Args, Serialize)]
struct RecoverArgs {
    /// Synthetic dataset file (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recovery is reported on the held-out part of this split.
    #[arg(long, value_enum, default_value_t = SplitKind::Random)]
    split: SplitKind,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful exits, not usage errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Recover(args) => cmd_recover(args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing.

fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(LibError::from)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(LibError::from)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = serde_json::to_string_pretty(value).map_err(LibError::from)?;
    out.push('\n');
    write_text(path, &out)
}

fn write_run_meta<T: Serialize>(dir: &Path, command: &str, args: &T) -> CliResult<()> {
    write_json(
        &dir.join("run.json"),
        &serde_json::json!({ "command": command, "args": args }),
    )
}

/// Fraction of the data held out by `--split random`.
const HOLDOUT_FRACTION: f64 = 0.2;

/// Split a dataset into (fit, held_out). Training consumes the fit part;
/// evaluation and recovery consume the held-out part.
fn split_records(
    records: Vec<ForecastRecord>,
    split: SplitKind,
    seed: u64,
) -> CliResult<(Vec<ForecastRecord>, Vec<ForecastRecord>)> {
    match split {
        SplitKind::Random => {
            let (rest, held) = dataset::random_split(records, HOLDOUT_FRACTION, seed)?;
            Ok((rest, held))
        }
        SplitKind::Temporal => {
            let parts = dataset::temporal_split(records);
            // Post-hoc maps are fitted on validation and judged on test, so
            // the evaluation pipeline pairs those two ranges.
            Ok((parts.val, parts.test))
        }
        SplitKind::None => Ok((Vec::new(), records)),
    }
}

fn to_example(rec: &ForecastRecord) -> CliResult<TrainExample> {
    let outcome = rec.outcome.ok_or_else(|| {
        CliError::Lib(LibError::InvalidParameter(format!(
            "record {}: unresolved outcome",
            rec.id
        )))
    })?;
    Ok(TrainExample {
        input: CalibratorInput::new(rec.features.clone(), rec.init_forecast)
            .map_err(CliError::Lib)?,
        outcome,
        histogram: rec.histogram.clone(),
    })
}

/// Point forecasts plus whatever richer structure the predictor offers.
struct Predictions {
    preds: Vec<f64>,
    outcomes: Vec<u8>,
    /// Mixture variances; absent when evaluating raw initial forecasts.
    uncertainties: Option<Vec<f64>>,
    /// Predicted mixtures; absent when evaluating raw initial forecasts.
    mixtures: Option<Vec<BetaMixture>>,
    /// Present when every record carries a histogram.
    histograms: Option<Vec<Histogram>>,
}

fn model_predictions(model: &Calibrator, records: &[ForecastRecord]) -> CliResult<Predictions> {
    let mut preds = Vec::with_capacity(records.len());
    let mut outcomes = Vec::with_capacity(records.len());
    let mut uncertainties = Vec::with_capacity(records.len());
    let mut mixtures = Vec::with_capacity(records.len());
    let mut histograms = Some(Vec::with_capacity(records.len()));
    for rec in records {
        let example = to_example(rec)?;
        let (p, u, m) = model.predict(&example.input)?;
        preds.push(p);
        outcomes.push(example.outcome);
        uncertainties.push(u);
        mixtures.push(m);
        match (&mut histograms, example.histogram) {
            (Some(hs), Some(h)) => hs.push(h),
            _ => histograms = None,
        }
    }
    Ok(Predictions {
        preds,
        outcomes,
        uncertainties: Some(uncertainties),
        mixtures: Some(mixtures),
        histograms,
    })
}

fn identity_predictions(records: &[ForecastRecord]) -> CliResult<Predictions> {
    let mut preds = Vec::with_capacity(records.len());
    let mut outcomes = Vec::with_capacity(records.len());
    for rec in records {
        let p = rec.init_forecast.ok_or_else(|| {
            CliError::Lib(LibError::InvalidParameter(format!(
                "record {}: no init_forecast to evaluate (pass --checkpoint to use a model)",
                rec.id
            )))
        })?;
        let y = rec.outcome.ok_or_else(|| {
            CliError::Lib(LibError::InvalidParameter(format!(
                "record {}: unresolved outcome",
                rec.id
            )))
        })?;
        preds.push(p);
        outcomes.push(y);
    }
    Ok(Predictions {
        preds,
        outcomes,
        uncertainties: None,
        mixtures: None,
        histograms: None,
    })
}

// ---------------------------------------------------------------------------
// gen

fn cmd_gen(args: GenArgs) -> CliResult<()> {
    ensure_dir(&args.output)?;
    let mut records = synthetic::generate(&GenConfig {
        n: args.n,
        forecasters: args.forecasters,
        seed: args.seed,
    })?;
    if !args.corrupt.is_empty() || args.retain.is_some() {
        // A separate stream keeps features and outcomes identical between
        // clean and transformed datasets generated from the same seed.
        synthetic::apply_transforms(
            &mut records,
            &args.corrupt,
            args.retain,
            args.seed ^ TRANSFORM_STREAM,
        )?;
    }

    let mut counts = [0usize; 3];
    for rec in &records {
        counts[rec.regime as usize] += 1;
    }
    let converted: Vec<ForecastRecord> = records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_record(i))
        .collect();
    dataset::save(&converted, &args.output.join("dataset.jsonl"))?;

    let regimes: Vec<_> = Regime::ALL
        .iter()
        .zip(&counts)
        .map(|(r, &count)| {
            let truth = r.truth();
            serde_json::json!({
                "name": r.name(),
                "alpha": truth.alpha(),
                "beta": truth.beta(),
                "mean": truth.mean(),
                "count": count,
            })
        })
        .collect();
    write_json(
        &args.output.join("run.json"),
        &serde_json::json!({ "command": "gen", "args": args, "regimes": regimes }),
    )
}

// ---------------------------------------------------------------------------
// train

fn loss_weights(args: &TrainArgs) -> CliResult<LossWeights> {
    let (mut binary, mut human) = match args.loss {
        LossKind::Binary => (1.0, 0.0),
        LossKind::Human => (0.0, 1.0),
        LossKind::Both => (1.0, 1.0),
    };
    if let Some(b) = args.lambda_binary {
        binary = b;
    }
    if let Some(h) = args.lambda_human {
        human = h;
    }
    LossWeights::new(binary, human).map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let weights = loss_weights(&args)?;
    if args.k == 0 || args.hidden == 0 {
        return Err(CliError::Usage(
            "--k and --hidden must be at least 1".into(),
        ));
    }
    ensure_dir(&args.output)?;
    let records = dataset::load(&args.input)?;
    let (train_part, _) = match args.split {
        SplitKind::Temporal => {
            let parts = dataset::temporal_split(records);
            (parts.train, Vec::new())
        }
        other => split_records(records, other, args.seed)?,
    };
    let examples: Vec<TrainExample> = train_part
        .iter()
        .map(to_example)
        .collect::<CliResult<_>>()?;
    let input_dim = examples
        .first()
        .ok_or(CliError::Lib(LibError::EmptyInput(
            "training split is empty",
        )))?
        .input
        .dim();

    let mut model = Calibrator::new(input_dim, args.hidden, args.k, args.seed)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        weights,
        optimizer: match args.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam,
        },
    };
    let trace = model.train(&examples, &cfg)?;

    model.save(&args.output.join("checkpoint.json"))?;
    let mut csv = String::from("epoch,binary,human,total\n");
    for (i, row) in trace.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            row.binary,
            row.human,
            row.total
        ));
    }
    write_text(&args.output.join("loss_trace.csv"), &csv)?;
    write_run_meta(&args.output, "train", &args)
}

// ---------------------------------------------------------------------------
// eval

fn fit_baseline(kind: BaselineKind, preds: &[f64], outcomes: &[u8]) -> CliResult<CalibrationMap> {
    Ok(match kind {
        BaselineKind::Platt => CalibrationMap::Platt(fit_platt(preds, outcomes)?),
        BaselineKind::Isotonic => CalibrationMap::Isotonic(fit_isotonic(preds, outcomes)?),
        BaselineKind::Binning => CalibrationMap::Binning(fit_binning(preds, outcomes, 10)?),
    })
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    ensure_dir(&args.output)?;
    let records = dataset::load(&args.input)?;
    let (fit_part, eval_part) = split_records(records, args.split, args.seed)?;

    let model = match &args.checkpoint {
        Some(path) => Some(Calibrator::load(path)?),
        None => None,
    };
    let predict = |recs: &[ForecastRecord]| -> CliResult<Predictions> {
        match &model {
            Some(m) => model_predictions(m, recs),
            None => identity_predictions(recs),
        }
    };

    let eval_preds = predict(&eval_part)?;
    let kl_mean = match (&eval_preds.mixtures, &eval_preds.histograms) {
        (Some(m), Some(h)) => Some(metrics::eval_kl(m, h)?),
        _ => None,
    };
    let report = metrics::evaluate(&eval_preds.preds, &eval_preds.outcomes, args.bins, kl_mean)?;
    write_json(&args.output.join("report.json"), &report)?;

    let table = metrics::reliability_table(&eval_preds.preds, &eval_preds.outcomes, args.bins)?;
    let mut csv = String::from("bin_mean_pred,bin_acc,count\n");
    for bin in &table {
        csv.push_str(&format!(
            "{},{},{}\n",
            bin.mean_pred, bin.accuracy, bin.count
        ));
    }
    write_text(&args.output.join("reliability.csv"), &csv)?;

    // The uncertainty curve needs predicted mixture variances, so the
    // identity predictor (raw initial forecasts) skips it.
    if let Some(uncertainties) = &eval_preds.uncertainties {
        let curve = metrics::uncertainty_curve(
            uncertainties,
            &eval_preds.preds,
            &eval_preds.outcomes,
            args.window,
        )?;
        let mut csv = String::from("rank,smoothed_brier\n");
        for (rank, value) in &curve {
            csv.push_str(&format!("{rank},{value}\n"));
        }
        write_text(&args.output.join("uncertainty.csv"), &csv)?;
    }

    if let Some(kind) = args.baseline {
        if fit_part.is_empty() {
            return Err(CliError::Usage(
                "--baseline needs --split random or temporal to provide data to fit on".into(),
            ));
        }
        let fit_preds = predict(&fit_part)?;
        let map = fit_baseline(kind, &fit_preds.preds, &fit_preds.outcomes)?;
        let calibrated: Vec<f64> = eval_preds.preds.iter().map(|&p| map.apply(p)).collect();
        let baseline_report =
            metrics::evaluate(&calibrated, &eval_preds.outcomes, args.bins, None)?;
        write_json(&args.output.join("baseline_map.json"), &map)?;
        write_json(&args.output.join("baseline_report.json"), &baseline_report)?;
    }

    write_run_meta(&args.output, "eval", &args)
}

// ---------------------------------------------------------------------------
// recover

fn cmd_recover(args: RecoverArgs) -> CliResult<()> {
    ensure_dir(&args.output)?;
    let records = dataset::load(&args.input)?;
    let (_, eval_part) = split_records(records, args.split, args.seed)?;
    let model = Calibrator::load(&args.checkpoint)?;

    // Per regime: sums of moment-matched alpha/beta and of predicted means.
    let mut sums = [[0.0f64; 3]; 3];
    let mut counts = [0usize; 3];
    for rec in &eval_part {
        if rec.source != Source::Synthetic {
            return Err(CliError::Lib(LibError::InvalidParameter(format!(
                "record {}: parameter recovery needs synthetic records with regime labels",
                rec.id
            ))));
        }
        let regime = Regime::classify(&rec.features)?;
        let example = to_example(rec)?;
        let (mean, var, _) = model.predict(&example.input)?;
        let matched = BetaParams::from_moments(mean, var)?;
        let r = regime as usize;
        sums[r][0] += matched.alpha();
        sums[r][1] += matched.beta();
        sums[r][2] += mean;
        counts[r] += 1;
    }

    let mut csv = String::from("regime,count,alpha,beta,mean,truth_alpha,truth_beta,truth_mean\n");
    for (i, regime) in Regime::ALL.iter().enumerate() {
        if counts[i] == 0 {
            continue;
        }
        let n = counts[i] as f64;
        let truth = regime.truth();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            regime.name(),
            counts[i],
            sums[i][0] / n,
            sums[i][1] / n,
            sums[i][2] / n,
            truth.alpha(),
            truth.beta(),
            truth.mean()
        ));
    }
    write_text(&args.output.join("recovery.csv"), &csv)?;
    write_run_meta(&args.output, "recover", &args)
}
