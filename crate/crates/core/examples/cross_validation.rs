//! Stratified five-fold cross-validation of several aggregation models on a
//! synthetic cohort, pooled into one accuracy table.
//!
//! `cargo run --release --example cross_validation`

use mcd_aggregate::aggregate::{FeatureVariant, InputKind, TrainConfig};
use mcd_aggregate::pipeline::{accuracy_table, run_experiment, ExperimentConfig};
use mcd_aggregate::synthcohort::{generate, GeneratorConfig};

pub fn main() -> mcd_aggregate::Result<()> {
    let (cohort, _) = generate(&GeneratorConfig {
        mc_runs: 30,
        seed: 5,
        ..GeneratorConfig::scaled(60)
    })?;
    let variants = [
        FeatureVariant::Max,
        FeatureVariant::Fcnn(InputKind::P),
        FeatureVariant::Fcnn(InputKind::PEpiAlea),
        FeatureVariant::Cnn1d(InputKind::P),
    ];
    let config = ExperimentConfig {
        seed: 8,
        train: TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
        mc_runs: 100,
        ..ExperimentConfig::default()
    };
    let result = run_experiment(&cohort, &variants, &config)?;
    println!(
        "{} folds, worst stroke-fraction gap {:.3}, {} image summaries computed",
        result.plan.folds.len(),
        result.plan.max_stratification_gap(),
        result.summaries_computed
    );
    println!(
        "{:<18} {:>9} {:>8} {:>17} {:>8} {:>7}",
        "variant", "correct", "acc", "95% CI", "Sanders", "AUC-PE"
    );
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    for row in accuracy_table(&result) {
        if let Some(err) = &row.error {
            println!("{:<18} failed: {err}", row.variant);
            continue;
        }
        println!(
            "{:<18} {:>4}/{:<4} {:>8} {:>17} {:>8} {:>7}",
            row.variant,
            row.correct.unwrap_or(0),
            row.total.unwrap_or(0),
            f(row.accuracy),
            format!("[{}, {}]", f(row.ci_lower), f(row.ci_upper)),
            f(row.sanders),
            f(row.auc_pe)
        );
    }
    Ok(())
}
