//! The `mcdagg` command line.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 filesystem
//! failure. Diagnostics are a single line on stderr. Every run writes a
//! manifest with the full effective configuration; `mcdagg rerun
//! --manifest <file>` replays it and reproduces the outputs byte for byte.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregationModel, FeatureVariant, ModelConfig, TrainConfig, DEFAULT_MC_RUNS};
use crate::evalmetrics::{default_removal_grid, evaluate, roc_auc, DEFAULT_Z};
use crate::nnkernel::AdamConfig;
use crate::pipeline::{
    accuracy_table, labeled_features, predict_patients, run_experiment, ExperimentConfig, ImageSummaries,
    SplitFractions,
};
use crate::predstore::{parse_samples_file, serialize_samples_file, CohortDataset, PatientRecord};
use crate::report::{self, PredictionRow};
use crate::synthcohort::{generate, GenerationManifest, GeneratorConfig};
use crate::{fsutil, seeds, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mcdagg",
    version,
    about = "Monte-Carlo dropout uncertainty and patient-level aggregation"
)]
struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic cohort of predictive samples.
    Gen(GenArgs),
    /// Per-image uncertainty measures of a samples file.
    Measure(MeasureArgs),
    /// Train one aggregation model.
    Train(TrainArgs),
    /// Patient-level predictions of a trained model.
    Predict(PredictArgs),
    /// Accuracy, calibration, discrimination and error-detection metrics.
    Eval(EvalArgs),
    /// Five-fold cross-validation of several variants.
    Cv(CvArgs),
    /// Replay a run from its manifest.
    Rerun(RerunArgs),
}

fn default_seed() -> u64 {
    seeds::DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = default_seed())]
    pub seed: u64,
    #[arg(long, default_value_t = GeneratorConfig::default().n_stroke_patients)]
    pub n_stroke: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().n_tia_patients)]
    pub n_tia: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().min_images)]
    pub min_images: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().max_images)]
    pub max_images: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().mean_images)]
    pub mean_images: f64,
    #[arg(long, default_value_t = GeneratorConfig::default().stroke_images_mean)]
    pub stroke_images_mean: f64,
    #[arg(long, default_value_t = GeneratorConfig::default().mc_runs)]
    pub mc_runs: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().concentration)]
    pub concentration: f64,
    #[arg(long, default_value_t = GeneratorConfig::default().difficulty_mix)]
    pub difficulty_mix: f64,
    #[arg(long, default_value_t = GeneratorConfig::default().label_noise)]
    pub label_noise: f64,
}

impl GenArgs {
    fn config(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_stroke_patients: self.n_stroke,
            n_tia_patients: self.n_tia,
            min_images: self.min_images,
            max_images: self.max_images,
            mean_images: self.mean_images,
            stroke_images_mean: self.stroke_images_mean,
            mc_runs: self.mc_runs,
            concentration: self.concentration,
            difficulty_mix: self.difficulty_mix,
            label_noise: self.label_noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MeasureArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional wide CSV of the stroke-class histograms.
    #[arg(long)]
    pub hist_out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Name (e.g. `fcnn-p`, `cnn1d-hist`) or letter a-h.
    #[arg(long)]
    pub variant: FeatureVariant,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = default_seed())]
    pub seed: u64,
    #[arg(long)]
    pub train: PathBuf,
    /// Early-stopping set; without it the last epoch is kept.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Overrides the variant's dropout rate.
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub log_out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MC_RUNS)]
    pub mc_runs: usize,
    #[arg(long, default_value_t = default_seed())]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_Z)]
    pub z: f64,
    /// Comma-separated removal fractions; defaults to 0,0.05,...,0.5.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `all` or a comma-separated list of names or letters.
    #[arg(long, default_value = "all")]
    pub variants: String,
    #[arg(long, default_value_t = default_seed())]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_MC_RUNS)]
    pub mc_runs: usize,
    #[arg(long, default_value_t = DEFAULT_Z)]
    pub z: f64,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = SplitFractions::default().train)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = SplitFractions::default().valid1)]
    pub valid1_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// What every run records next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub run: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationManifest>,
}

impl Manifest {
    fn new(run: Command) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            run,
            generation: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("--{name} must be a positive number, got {v}")))
    }
}

fn check_at_least_one(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(config_err(format!("--{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn check_dropout(rate: Option<f64>) -> Result<()> {
    match rate {
        Some(r) if !(0.0..1.0).contains(&r) => Err(config_err(format!("--dropout {r} outside [0, 1)"))),
        _ => Ok(()),
    }
}

fn resolve_grid(grid: &mut Option<Vec<f64>>) -> Result<()> {
    let g = grid.get_or_insert_with(default_removal_grid);
    if g.is_empty() {
        return Err(config_err("--grid is empty"));
    }
    if let Some(f) = g.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(config_err(format!("--grid fraction {f} outside [0, 1)")));
    }
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Checks every flag and fills in derived defaults so the manifest records
/// the effective configuration.
fn normalize(cmd: &mut Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => {
            a.config().validate()?;
            a.manifest.get_or_insert_with(|| sidecar(&a.out));
        }
        Command::Measure(a) => {
            a.manifest.get_or_insert_with(|| sidecar(&a.out));
        }
        Command::Train(a) => {
            check_at_least_one("epochs", a.epochs)?;
            check_at_least_one("batch-size", a.batch_size)?;
            check_positive("lr", a.lr)?;
            check_dropout(a.dropout)?;
            a.manifest.get_or_insert_with(|| sidecar(&a.model_out));
        }
        Command::Predict(a) => {
            check_at_least_one("mc-runs", a.mc_runs)?;
            a.manifest.get_or_insert_with(|| sidecar(&a.out));
        }
        Command::Eval(a) => {
            check_positive("z", a.z)?;
            resolve_grid(&mut a.grid)?;
        }
        Command::Cv(a) => {
            crate::aggregate::parse_variant_list(&a.variants).map_err(config_err)?;
            check_at_least_one("epochs", a.epochs)?;
            check_at_least_one("batch-size", a.batch_size)?;
            check_positive("lr", a.lr)?;
            check_at_least_one("mc-runs", a.mc_runs)?;
            check_positive("z", a.z)?;
            resolve_grid(&mut a.grid)?;
            let f = SplitFractions {
                train: a.train_fraction,
                valid1: a.valid1_fraction,
            };
            if !(f.train > 0.0 && f.valid1 > 0.0 && f.train + f.valid1 < 1.0) {
                return Err(config_err(format!(
                    "split fractions train {} and valid1 {} must be positive and sum below 1",
                    f.train, f.valid1
                )));
            }
        }
        Command::Rerun(_) => {}
    }
    Ok(())
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(config_err("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| config_err(format!("cannot build thread pool: {e}")))?
            .install(f),
    }
}

fn all_patients(d: &CohortDataset) -> Vec<&PatientRecord> {
    d.patients().iter().collect()
}

fn cmd_gen(a: &GenArgs, run: Command) -> Result<()> {
    let (dataset, generation) = generate(&a.config())?;
    serialize_samples_file(&dataset, &a.out)?;
    let manifest = Manifest {
        generation: Some(generation),
        ..Manifest::new(run)
    };
    fsutil::write_json_atomic(a.manifest.as_ref().expect("normalized"), &manifest)
}

fn cmd_measure(a: &MeasureArgs) -> Result<()> {
    let dataset = parse_samples_file(&a.data)?;
    let summaries = ImageSummaries::compute(&dataset);
    let ordered = dataset
        .patients()
        .iter()
        .map(|p| summaries.get(p.patient_id()).map(<[_]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    fsutil::write_atomic(&a.out, |w| report::write_measures_csv(&dataset, &ordered, w))?;
    if let Some(h) = &a.hist_out {
        fsutil::write_atomic(h, |w| report::write_histogram_csv(&dataset, &ordered, w))?;
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let train_ds = parse_samples_file(&a.train)?;
    let valid_ds = a.valid.as_deref().map(parse_samples_file).transpose()?;
    let train_sum = ImageSummaries::compute(&train_ds);
    let train = labeled_features(&all_patients(&train_ds), &train_sum, a.variant)?;
    let valid = match &valid_ds {
        Some(d) => labeled_features(&all_patients(d), &ImageSummaries::compute(d), a.variant)?,
        None => Vec::new(),
    };
    let model_config = ModelConfig {
        dropout: a.dropout,
        ..ModelConfig::default()
    };
    let train_config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
    };
    let (model, log) = AggregationModel::fit(a.variant, &model_config, &train, &valid, train_config)?;
    model.save(&a.model_out)?;
    if let Some(p) = &a.log_out {
        fsutil::write_string_atomic(p, &report::training_log_csv(&log))?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = AggregationModel::load(&a.model)?;
    let dataset = parse_samples_file(&a.data)?;
    let summaries = ImageSummaries::compute(&dataset);
    let outcomes = predict_patients(&model, &all_patients(&dataset), &summaries, a.mc_runs, a.seed)?;
    let rows: Vec<PredictionRow> = outcomes.iter().map(PredictionRow::from).collect();
    fsutil::write_atomic(&a.out, |w| report::write_predictions_csv(&rows, w))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let file = std::fs::File::open(&a.predictions).map_err(Error::file(&a.predictions))?;
    let rows = report::read_predictions_csv(file)?;
    if rows.is_empty() {
        return Err(Error::Empty("predictions file has no rows".into()));
    }
    let scored: Vec<_> = rows.iter().map(PredictionRow::scored).collect();
    // Discrimination needs both classes; fail loudly rather than omit it.
    let probs: Vec<f64> = scored.iter().map(|o| o.p_stroke).collect();
    let labels: Vec<bool> = scored.iter().map(|o| o.is_stroke).collect();
    roc_auc(&probs, &labels)?;
    let report = evaluate(&scored, a.z, a.grid.as_deref().expect("normalized"))?;
    report::write_evaluation(&a.out_dir, &report, a.z)
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    let variants = crate::aggregate::parse_variant_list(&a.variants).map_err(config_err)?;
    let dataset = parse_samples_file(&a.data)?;
    let cfg = ExperimentConfig {
        seed: a.seed,
        train: TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            adam: AdamConfig {
                lr: a.lr,
                ..AdamConfig::default()
            },
            seed: a.seed,
        },
        model: ModelConfig::default(),
        mc_runs: a.mc_runs,
        fractions: SplitFractions {
            train: a.train_fraction,
            valid1: a.valid1_fraction,
        },
        z: a.z,
        removal_grid: a.grid.clone().expect("normalized"),
    };
    let result = run_experiment(&dataset, &variants, &cfg)?;
    let out = &a.out_dir;
    fsutil::write_json_atomic(&out.join("folds.json"), &result.plan)?;
    for cell in &result.cells {
        let dir = out
            .join(format!("fold_{}", cell.fold + 1))
            .join(cell.variant.to_string());
        match &cell.outcome {
            Ok(c) => {
                c.model.save(&dir.join("model.json"))?;
                let rows: Vec<PredictionRow> = c.predictions.iter().map(PredictionRow::from).collect();
                fsutil::write_atomic(&dir.join("predictions.csv"), |w| {
                    report::write_predictions_csv(&rows, w)
                })?;
                if !c.log.is_empty() {
                    fsutil::write_string_atomic(&dir.join("training_log.csv"), &report::training_log_csv(&c.log))?;
                }
                report::write_evaluation(&dir, &c.report, a.z)?;
            }
            Err(e) => fsutil::write_string_atomic(&dir.join("error.txt"), &format!("{e}\n"))?,
        }
    }
    for p in &result.pooled {
        let dir = out.join("pooled").join(p.variant.to_string());
        match &p.report {
            Ok(r) => report::write_evaluation(&dir, r, a.z)?,
            Err(e) => fsutil::write_string_atomic(&dir.join("error.txt"), &format!("{e}\n"))?,
        }
    }
    fsutil::write_string_atomic(
        &out.join("table2.csv"),
        &report::accuracy_table_csv(&accuracy_table(&result)),
    )
}

/// Where the manifest of a normalized command goes, if it has one.
fn manifest_path(cmd: &Command) -> Option<PathBuf> {
    match cmd {
        Command::Gen(_) | Command::Rerun(_) => None,
        Command::Measure(a) => a.manifest.clone(),
        Command::Train(a) => a.manifest.clone(),
        Command::Predict(a) => a.manifest.clone(),
        Command::Eval(a) => Some(a.out_dir.join("manifest.json")),
        Command::Cv(a) => Some(a.out_dir.join("manifest.json")),
    }
}

/// Executes a command; the library entry point behind the binary.
pub fn execute(mut cmd: Command) -> Result<()> {
    if let Command::Rerun(r) = &cmd {
        let text = std::fs::read_to_string(&r.manifest).map_err(Error::file(&r.manifest))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| config_err(format!("bad manifest: {e}")))?;
        if matches!(manifest.run, Command::Rerun(_)) {
            return Err(config_err("a manifest cannot replay another rerun"));
        }
        return execute(manifest.run);
    }
    normalize(&mut cmd)?;
    match &cmd {
        Command::Gen(a) => return cmd_gen(a, cmd.clone()),
        Command::Measure(a) => cmd_measure(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Predict(a) => cmd_predict(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Cv(a) => cmd_cv(a)?,
        Command::Rerun(_) => unreachable!(),
    }
    if let Some(path) = manifest_path(&cmd) {
        fsutil::write_json_atomic(&path, &Manifest::new(cmd))?;
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprintln!("error: a subcommand is required (see --help)");
            return 1;
        }
        Err(e) if e.exit_code() == 0 => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return 1;
        }
    };
    match with_threads(cli.threads, || execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}
