//! Train a fully connected aggregation network on the five most suspicious
//! images of each patient, then diagnose held-out patients with
//! patient-level Monte-Carlo dropout. The Maximum rule is shown for
//! comparison.
//!
//! `cargo run --release --example fcnn_aggregation`

use mcd_aggregate::aggregate::{AggregationModel, FeatureVariant, InputKind, ModelConfig, TrainConfig};
use mcd_aggregate::pipeline::{labeled_features, make_folds, predict_patients, ImageSummaries};
use mcd_aggregate::predstore::PatientRecord;
use mcd_aggregate::synthcohort::{generate, GeneratorConfig};

pub fn main() -> mcd_aggregate::Result<()> {
    let (cohort, _) = generate(&GeneratorConfig {
        mc_runs: 30,
        seed: 3,
        ..GeneratorConfig::scaled(80)
    })?;
    // per-image summaries are computed once and shared by every model
    let summaries = ImageSummaries::compute(&cohort);
    let fold = &make_folds(&cohort, 1)?.folds[0];
    let pick = |ids: &[String]| -> Vec<&PatientRecord> { ids.iter().filter_map(|id| cohort.patient(id)).collect() };
    let (train, valid, test) = (pick(&fold.train1), pick(&fold.valid1), pick(&fold.test));

    let variant = FeatureVariant::Fcnn(InputKind::PEpiAlea);
    let train_config = TrainConfig {
        epochs: 60,
        seed: 11,
        ..TrainConfig::default()
    };
    let (model, log) = AggregationModel::fit(
        variant,
        &ModelConfig::default(),
        &labeled_features(&train, &summaries, variant)?,
        &labeled_features(&valid, &summaries, variant)?,
        train_config,
    )?;
    let best = &log[model.best_epoch.saturating_sub(1)];
    println!(
        "{variant}: kept epoch {} of {} (validation loss {:.4})",
        model.best_epoch,
        log.len(),
        best.valid_loss.unwrap_or(f64::NAN)
    );

    let outcomes = predict_patients(&model, &test, &summaries, 100, 5)?;
    let baseline = predict_patients(&AggregationModel::maximum(train_config), &test, &summaries, 100, 5)?;
    let accuracy = |o: &[mcd_aggregate::aggregate::PatientOutcome]| {
        o.iter()
            .filter(|p| p.prediction.predicted_label == p.true_label)
            .count() as f64
            / o.len() as f64
    };
    println!(
        "test accuracy: {variant} {:.3}, maximum rule {:.3}",
        accuracy(&outcomes),
        accuracy(&baseline)
    );

    println!("\nmost uncertain test patients (predictive entropy):");
    let mut ranked: Vec<_> = outcomes.iter().collect();
    ranked.sort_by(|a, b| {
        let pe = |o: &&mcd_aggregate::aggregate::PatientOutcome| o.prediction.summary.as_ref().map_or(0.0, |s| s.pe);
        pe(b).total_cmp(&pe(a))
    });
    for o in ranked.iter().take(5) {
        let s = o.prediction.summary.as_ref().expect("networks report uncertainty");
        println!(
            "  {} true {:>6}, p(stroke) {:.3}, PE {:.3}, MI {:.4}",
            o.patient_id,
            o.true_label.as_str(),
            o.prediction.p_stroke(),
            s.pe,
            s.mi
        );
    }
    Ok(())
}
