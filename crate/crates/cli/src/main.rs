//! `fsnids`: dataset preparation, experiments, ablations and reports.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fsnids_core::bundle::ModelBundle;
use fsnids_core::data::{load_csv, stratified_split, synthetic_blobs, BlobSpec, CsvOptions, LoadReport};
use fsnids_core::harness::{
    aggregate, config_hash, fit_fixed, load_data, load_reports, render, run_ablation, run_experiment_on, run_root,
    write_reports, AblationAxis, ExperimentConfig, ReportFormat,
};
use fsnids_core::Error;

#[derive(Parser)]
#[command(name = "fsnids", version, about = "Few-shot intrusion detection with triplet metric learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified train/test split of a labelled CSV or of synthetic blobs.
    Split(SplitArgs),
    /// Subset sampling, cross-validated search, retraining and evaluation.
    Search(RunArgs),
    /// Fits the `[fixed]` configuration once and writes a model bundle.
    Train(RunArgs),
    /// Scores a model bundle on a labelled CSV and prints the score report.
    Eval(EvalArgs),
    /// Runs the base configuration once per value of an ablation axis.
    Ablate(AblateArgs),
    /// Aggregates the reports in a run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    Blobs,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_col: String,
    #[arg(long, default_value = "benign")]
    benign: String,
    /// Share of each class that goes to train.csv.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 39_058_032)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    /// Number of classes including benign.
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    /// Distance between class centres in units of sigma.
    #[arg(long, default_value_t = 6.0)]
    sep: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 8000)]
    benign_count: usize,
    #[arg(long, default_value_t = 400)]
    attack_count: usize,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// `key=value` applied after the file; dotted keys reach nested tables.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to `<run root>/<config hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Also write one predicted class name per row.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    axis: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "table")]
    format: String,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::MissingLabelColumn(_) => 2,
        e if e.is_numeric() => 4,
        _ => 3,
    }
}

fn note_drops(path: &Path, load: &LoadReport) {
    if load.dropped > 0 {
        eprintln!(
            "{}: dropped {} of {} rows with missing or non-finite features",
            path.display(),
            load.dropped,
            load.rows_read
        );
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn split(args: SplitArgs) -> Result<(), Error> {
    let ds = match (&args.input, args.synthetic) {
        (_, Some(Synthetic::Blobs)) => {
            if args.classes < 2 {
                return Err(Error::InvalidArgument("--classes must be at least 2".into()));
            }
            let mut counts = vec![args.attack_count; args.classes];
            counts[0] = args.benign_count;
            synthetic_blobs(&BlobSpec {
                counts,
                dim: args.dim,
                separation: args.sep,
                sigma: args.sigma,
                seed: args.seed,
            })?
        }
        (Some(input), None) => {
            let opts = CsvOptions::new(&args.label_col).benign(&args.benign);
            let (ds, load) = load_csv(input, &opts)?;
            note_drops(input, &load);
            ds
        }
        (None, None) => return Err(Error::InvalidArgument("either --input or --synthetic is required".into())),
    };
    let (train, test) = stratified_split(&ds, args.fraction, args.seed)?;
    create_dir(&args.out)?;
    train.write_csv(&args.out.join("train.csv"), &args.label_col)?;
    test.write_csv(&args.out.join("test.csv"), &args.label_col)?;
    ds.write_class_map(&args.out.join("classes.json"))?;
    eprintln!(
        "wrote {} train and {} test rows to {}",
        train.len(),
        test.len(),
        args.out.display()
    );
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    if args.workers == 0 {
        return Err(Error::InvalidArgument("--workers must be at least 1".into()));
    }
    let mut cfg = ExperimentConfig::from_file(&args.config, &args.overrides).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
        e => e,
    })?;
    cfg.validate()?;
    cfg.workers = args.workers;
    Ok(cfg)
}

fn out_dir(out: Option<PathBuf>, default_name: String) -> PathBuf {
    out.unwrap_or_else(|| run_root().join(default_name))
}

fn load_experiment_data(cfg: &ExperimentConfig) -> Result<fsnids_core::harness::LoadedData, Error> {
    let data = load_data(cfg)?;
    let d = &cfg.data;
    let paths: Vec<&PathBuf> = match (&d.train, &d.test) {
        (Some(train), Some(test)) => vec![train, test],
        _ => d.path.iter().collect(),
    };
    for (load, path) in data.reports.iter().zip(paths) {
        note_drops(path, load);
    }
    Ok(data)
}

fn search(args: RunArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let dir = out_dir(args.out, config_hash(&cfg));
    let data = load_experiment_data(&cfg)?;
    let report = run_experiment_on(&cfg, &data)?;
    for path in write_reports(&dir, &[report])? {
        println!("{}", path.display());
    }
    Ok(())
}

fn train(args: RunArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let dir = out_dir(args.out, format!("train-{}", config_hash(&cfg)));
    let data = load_experiment_data(&cfg)?;
    let fit = fit_fixed(&cfg, &data)?;
    let bundle = ModelBundle::from_fit(&cfg, &fit)?;
    create_dir(&dir)?;
    let bundle_path = dir.join("bundle.json");
    bundle.save(&bundle_path)?;
    fit.subset.write_csv(&dir.join("train_subset.csv"), &cfg.data.label_column)?;
    eprintln!(
        "trained on {} rows, train macro F1 {:.4}",
        fit.subset.len(),
        bundle.train_score.macro_f1
    );
    println!("{}", bundle_path.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Error> {
    let bundle = ModelBundle::load(&args.bundle)?;
    let evaluation = bundle.evaluate_csv(&args.input)?;
    note_drops(&args.input, &evaluation.load);
    if let Some(path) = &args.predictions {
        let mut text = String::new();
        for &p in &evaluation.predictions {
            text.push_str(&bundle.class_map[p]);
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    println!("{}", serde_json::to_string_pretty(&evaluation.score)?);
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<(), Error> {
    let axis: AblationAxis = args.axis.parse()?;
    let cfg = load_config(&args.config)?;
    let dir = out_dir(args.out, format!("ablate-{axis}-{}", config_hash(&cfg)));
    let data = load_experiment_data(&cfg)?;
    let entries = run_ablation(axis, &cfg, &data)?;
    let reports: Vec<_> = entries.into_iter().map(|e| e.report).collect();
    for path in write_reports(&dir, &reports)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Error> {
    let format: ReportFormat = args.format.parse()?;
    if !args.run.is_dir() {
        return Err(Error::Config(format!("{} is not a run directory", args.run.display())));
    }
    let reports = load_reports(&args.run)?;
    print!("{}", render(&aggregate(&reports), format)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Split(a) => split(a),
        Command::Search(a) => search(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
