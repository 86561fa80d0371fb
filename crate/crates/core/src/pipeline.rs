//! Stratified five-fold cross-validation of the aggregation models.
//!
//! Every fold holds out one test partition. The remaining patients are split
//! per class into Train-1 / Valid-1 / Valid-2 (70/15/15 by default). The
//! networks train on Train-1 plus Valid-1, early-stop on Valid-2, and predict
//! the held-out patients with Monte-Carlo dropout. Headline numbers pool the
//! held-out predictions of all folds.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    build_features, AggregationModel, EpochLog, FeatureVariant, ModelConfig, PatientOutcome, TrainConfig,
    DEFAULT_MC_RUNS,
};
use crate::evalmetrics::{default_removal_grid, evaluate, EvaluationReport, DEFAULT_Z};
use crate::measures::{summarize, UncertaintyMeasure, UncertaintySummary};
use crate::nnkernel::Tensor;
use crate::predstore::{CohortDataset, PatientLabel, PatientRecord};
use crate::{seeds, Error, Result};

pub const FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid1: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            valid1: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub test: Vec<String>,
    pub train1: Vec<String>,
    pub valid1: Vec<String>,
    pub valid2: Vec<String>,
}

impl FoldSplit {
    /// Patients the aggregators learn from.
    pub fn training_ids(&self) -> Vec<String> {
        self.train1.iter().chain(&self.valid1).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStratification {
    pub split: String,
    pub patients: usize,
    pub stroke: usize,
    pub stroke_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub fractions: SplitFractions,
    pub cohort_stroke_fraction: f64,
    pub folds: Vec<FoldSplit>,
    pub stratification: Vec<Vec<SplitStratification>>,
}

impl FoldPlan {
    /// Largest deviation of any non-empty split's stroke fraction from the
    /// cohort's.
    pub fn max_stratification_gap(&self) -> f64 {
        self.stratification
            .iter()
            .flatten()
            .filter_map(|s| s.stroke_fraction)
            .map(|f| (f - self.cohort_stroke_fraction).abs())
            .fold(0.0, f64::max)
    }
}

pub fn make_folds(dataset: &CohortDataset, seed: u64) -> Result<FoldPlan> {
    make_folds_with(dataset, seed, SplitFractions::default())
}

/// Stratified fold plan: each class is shuffled and dealt round-robin over
/// the five test partitions, then the rest of each fold is split per class.
pub fn make_folds_with(dataset: &CohortDataset, seed: u64, fractions: SplitFractions) -> Result<FoldPlan> {
    if !(fractions.train > 0.0 && fractions.valid1 >= 0.0 && fractions.train + fractions.valid1 <= 1.0) {
        return Err(Error::Config(format!("invalid split fractions {fractions:?}")));
    }
    let by_class = |label: PatientLabel| -> Vec<String> {
        dataset
            .patients()
            .iter()
            .filter(|p| p.label() == label)
            .map(|p| p.patient_id().to_string())
            .collect()
    };
    let mut stroke = by_class(PatientLabel::Stroke);
    let mut tia = by_class(PatientLabel::Tia);
    if dataset.len() < 2 * FOLDS || stroke.len() < FOLDS || tia.len() < FOLDS {
        return Err(Error::Config(format!(
            "cannot stratify {} stroke and {} TIA patients into {FOLDS} folds (need at least {FOLDS} of each)",
            stroke.len(),
            tia.len()
        )));
    }
    let mut rng = seeds::rng(seeds::derive(seed, &[0]));
    stroke.shuffle(&mut rng);
    tia.shuffle(&mut rng);

    let mut tests = vec![Vec::new(); FOLDS];
    for (k, id) in stroke.iter().chain(&tia).enumerate() {
        tests[k % FOLDS].push(id.clone());
    }
    let label_of: HashMap<&str, PatientLabel> =
        dataset.patients().iter().map(|p| (p.patient_id(), p.label())).collect();

    let mut folds = Vec::with_capacity(FOLDS);
    for (i, test) in tests.into_iter().enumerate() {
        let mut fold_rng = seeds::rng(seeds::derive(seed, &[1, i as u64]));
        let (mut train1, mut valid1, mut valid2) = (Vec::new(), Vec::new(), Vec::new());
        for class in [&stroke, &tia] {
            let mut rest: Vec<String> = class.iter().filter(|id| !test.contains(id)).cloned().collect();
            rest.shuffle(&mut fold_rng);
            let n = rest.len();
            let n_train = ((fractions.train * n as f64).round() as usize).min(n);
            let n_v1 = ((fractions.valid1 * n as f64).round() as usize).min(n - n_train);
            valid2.extend(rest.split_off(n_train + n_v1));
            valid1.extend(rest.split_off(n_train));
            train1.extend(rest);
        }
        folds.push(FoldSplit {
            test,
            train1,
            valid1,
            valid2,
        });
    }

    let describe = |name: &str, ids: &[String]| {
        let s = ids
            .iter()
            .filter(|id| label_of[id.as_str()] == PatientLabel::Stroke)
            .count();
        SplitStratification {
            split: name.to_string(),
            patients: ids.len(),
            stroke: s,
            stroke_fraction: (!ids.is_empty()).then(|| s as f64 / ids.len() as f64),
        }
    };
    let stratification = folds
        .iter()
        .map(|f| {
            vec![
                describe("test", &f.test),
                describe("train1", &f.train1),
                describe("valid1", &f.valid1),
                describe("valid2", &f.valid2),
            ]
        })
        .collect();
    Ok(FoldPlan {
        seed,
        fractions,
        cohort_stroke_fraction: stroke.len() as f64 / dataset.len() as f64,
        folds,
        stratification,
    })
}

/// Per-image summaries of a whole cohort, computed once and shared.
pub struct ImageSummaries {
    by_patient: HashMap<String, Vec<UncertaintySummary>>,
    computed: usize,
}

impl ImageSummaries {
    pub fn compute(dataset: &CohortDataset) -> Self {
        let counter = AtomicUsize::new(0);
        let by_patient = dataset
            .patients()
            .par_iter()
            .map(|p| {
                let s: Vec<UncertaintySummary> = p
                    .images()
                    .iter()
                    .map(|im| {
                        counter.fetch_add(1, Ordering::Relaxed);
                        summarize(&im.samples)
                    })
                    .collect();
                (p.patient_id().to_string(), s)
            })
            .collect();
        Self {
            by_patient,
            computed: counter.into_inner(),
        }
    }

    pub fn get(&self, patient_id: &str) -> Result<&[UncertaintySummary]> {
        self.by_patient
            .get(patient_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidCohort(format!("no summaries for patient {patient_id}")))
    }

    /// Number of `summarize` calls made.
    pub fn computed(&self) -> usize {
        self.computed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub mc_runs: usize,
    pub fractions: SplitFractions,
    pub z: f64,
    pub removal_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: seeds::DEFAULT_SEED,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            mc_runs: DEFAULT_MC_RUNS,
            fractions: SplitFractions::default(),
            z: DEFAULT_Z,
            removal_grid: default_removal_grid(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub model: AggregationModel,
    pub log: Vec<EpochLog>,
    pub predictions: Vec<PatientOutcome>,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    /// 0-based fold index.
    pub fold: usize,
    pub variant: FeatureVariant,
    pub outcome: std::result::Result<CellOutput, String>,
}

#[derive(Debug, Clone)]
pub struct PooledResult {
    pub variant: FeatureVariant,
    pub report: std::result::Result<EvaluationReport, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub plan: FoldPlan,
    pub variants: Vec<FeatureVariant>,
    /// Fold-major, variants in request order.
    pub cells: Vec<CellResult>,
    pub pooled: Vec<PooledResult>,
    pub summaries_computed: usize,
}

impl ExperimentResult {
    pub fn pooled_report(&self, variant: FeatureVariant) -> Option<&EvaluationReport> {
        self.pooled
            .iter()
            .find(|p| p.variant == variant)
            .and_then(|p| p.report.as_ref().ok())
    }

    pub fn cell(&self, fold: usize, variant: FeatureVariant) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.fold == fold && c.variant == variant)
    }
}

fn patients<'a>(dataset: &'a CohortDataset, ids: &[String]) -> Result<Vec<&'a PatientRecord>> {
    ids.iter()
        .map(|id| {
            dataset
                .patient(id)
                .ok_or_else(|| Error::InvalidCohort(format!("unknown patient {id}")))
        })
        .collect()
}

/// Feature tensors and labels for `list`, in order.
pub fn labeled_features(
    list: &[&PatientRecord],
    summaries: &ImageSummaries,
    variant: FeatureVariant,
) -> Result<Vec<(Tensor, PatientLabel)>> {
    if !variant.is_network() {
        return Ok(Vec::new());
    }
    list.iter()
        .map(|p| Ok((build_features(p, summaries.get(p.patient_id())?, variant)?, p.label())))
        .collect()
}

/// Predicts every patient in `list`; patient `k` uses dropout seed
/// `derive(seed, [1, k])`.
pub fn predict_patients(
    model: &AggregationModel,
    list: &[&PatientRecord],
    summaries: &ImageSummaries,
    runs: usize,
    seed: u64,
) -> Result<Vec<PatientOutcome>> {
    list.iter()
        .enumerate()
        .map(|(k, p)| {
            Ok(PatientOutcome {
                patient_id: p.patient_id().to_string(),
                true_label: p.label(),
                prediction: model.predict(
                    p,
                    summaries.get(p.patient_id())?,
                    runs,
                    seeds::derive(seed, &[1, k as u64]),
                )?,
            })
        })
        .collect()
}

fn run_cell(
    dataset: &CohortDataset,
    summaries: &ImageSummaries,
    split: &FoldSplit,
    fold: usize,
    variant: FeatureVariant,
    cfg: &ExperimentConfig,
) -> Result<CellOutput> {
    let cell_seed = seeds::derive(cfg.seed, &[2, fold as u64, variant.ordinal() as u64]);
    let train_config = TrainConfig {
        seed: seeds::derive(cell_seed, &[0]),
        ..cfg.train
    };
    let train = labeled_features(&patients(dataset, &split.training_ids())?, summaries, variant)?;
    let valid = labeled_features(&patients(dataset, &split.valid2)?, summaries, variant)?;
    let (model, log) = AggregationModel::fit(variant, &cfg.model, &train, &valid, train_config)?;
    let predictions = predict_patients(
        &model,
        &patients(dataset, &split.test)?,
        summaries,
        cfg.mc_runs,
        cell_seed,
    )?;
    let scored: Vec<_> = predictions.iter().map(PatientOutcome::scored).collect();
    let report = evaluate(&scored, cfg.z, &cfg.removal_grid)?;
    Ok(CellOutput {
        model,
        log,
        predictions,
        report,
    })
}

/// Runs every variant on every fold. Cells run in parallel on the current
/// rayon pool; results do not depend on the number of threads. A failing
/// cell is recorded and does not stop the others.
pub fn run_experiment(
    dataset: &CohortDataset,
    variants: &[FeatureVariant],
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    if cfg.mc_runs == 0 {
        return Err(Error::Config("mc_runs must be at least 1".into()));
    }
    let plan = make_folds_with(dataset, cfg.seed, cfg.fractions)?;
    let summaries = ImageSummaries::compute(dataset);

    let jobs: Vec<(usize, FeatureVariant)> = (0..FOLDS).flat_map(|f| variants.iter().map(move |&v| (f, v))).collect();
    let cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(fold, variant)| CellResult {
            fold,
            variant,
            outcome: run_cell(dataset, &summaries, &plan.folds[fold], fold, variant, cfg).map_err(|e| e.to_string()),
        })
        .collect();

    let pooled = variants
        .iter()
        .map(|&variant| {
            let mut scored = Vec::new();
            let mut failure = None;
            for c in cells.iter().filter(|c| c.variant == variant) {
                match &c.outcome {
                    Ok(out) => scored.extend(out.predictions.iter().map(PatientOutcome::scored)),
                    Err(e) => {
                        failure.get_or_insert_with(|| format!("fold {} failed: {e}", c.fold + 1));
                    }
                }
            }
            let report = match failure {
                Some(f) => Err(f),
                None => evaluate(&scored, cfg.z, &cfg.removal_grid).map_err(|e| e.to_string()),
            };
            PooledResult { variant, report }
        })
        .collect();

    Ok(ExperimentResult {
        plan,
        variants: variants.to_vec(),
        cells,
        pooled,
        summaries_computed: summaries.computed(),
    })
}

/// One row of the variant x input accuracy matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub variant: String,
    pub family: String,
    pub input: String,
    pub correct: Option<usize>,
    pub total: Option<usize>,
    pub accuracy: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub sanders: Option<f64>,
    pub auc_pe: Option<f64>,
    pub error: Option<String>,
}

pub fn accuracy_table(result: &ExperimentResult) -> Vec<AccuracyRow> {
    result
        .pooled
        .iter()
        .map(|p| {
            let r = p.report.as_ref().ok();
            AccuracyRow {
                variant: p.variant.to_string(),
                family: p.variant.family().to_string(),
                input: p.variant.input().map_or("p", |k| k.as_str()).to_string(),
                correct: r.map(|r| r.accuracy.correct),
                total: r.map(|r| r.accuracy.total),
                accuracy: r.map(|r| r.accuracy.accuracy),
                ci_lower: r.map(|r| r.accuracy.lower),
                ci_upper: r.map(|r| r.accuracy.upper),
                sanders: r.map(|r| r.sanders),
                auc_pe: r.and_then(|r| r.error_detection_auc(UncertaintyMeasure::Pe)),
                error: p.report.as_ref().err().cloned(),
            }
        })
        .collect()
}
