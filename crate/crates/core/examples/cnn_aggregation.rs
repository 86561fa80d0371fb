//! A 1D convolutional aggregator reads the whole slice sequence of a
//! patient, whatever its length, and pools it with a global max.
//!
//! `cargo run --release --example cnn_aggregation`

use mcd_aggregate::aggregate::{build_features, AggregationModel, FeatureVariant, InputKind, ModelConfig, TrainConfig};
use mcd_aggregate::pipeline::{labeled_features, ImageSummaries};
use mcd_aggregate::predstore::PatientRecord;
use mcd_aggregate::synthcohort::{generate, GeneratorConfig};

pub fn main() -> mcd_aggregate::Result<()> {
    let (cohort, _) = generate(&GeneratorConfig {
        mc_runs: 30,
        seed: 21,
        ..GeneratorConfig::scaled(60)
    })?;
    let summaries = ImageSummaries::compute(&cohort);
    let patients: Vec<&PatientRecord> = cohort.patients().iter().collect();
    let (train, test) = patients.split_at(45);

    let variant = FeatureVariant::Cnn1d(InputKind::PVrPeMiVar);
    let (model, _) = AggregationModel::fit(
        variant,
        &ModelConfig::default(),
        &labeled_features(train, &summaries, variant)?,
        &[],
        TrainConfig {
            epochs: 40,
            seed: 2,
            ..TrainConfig::default()
        },
    )?;

    let mut correct = 0;
    for p in test {
        let images = summaries.get(p.patient_id())?;
        let x = build_features(p, images, variant)?;
        let pred = model.predict(p, images, 200, 9)?;
        correct += usize::from(pred.predicted_label == p.label());
        println!(
            "{}: {} slices -> input {}x{}, p(stroke) {:.3} (true {}), MC variance {:.2e}",
            p.patient_id(),
            p.images().len(),
            x.rows(),
            x.cols(),
            pred.p_stroke(),
            p.label().as_str(),
            pred.summary.as_ref().map_or(0.0, |s| s.var)
        );
    }
    println!("{correct}/{} held-out patients correct", test.len());
    Ok(())
}
