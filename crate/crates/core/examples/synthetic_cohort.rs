//! Generate a seeded synthetic cohort, write it in the long-format samples
//! CSV and read it back.
//!
//! `cargo run --example synthetic_cohort`

use mcd_aggregate::predstore::{parse_samples_file, serialize_samples_file, ImageLabel, PatientLabel};
use mcd_aggregate::synthcohort::{generate, GeneratorConfig};

pub fn main() -> mcd_aggregate::Result<()> {
    let config = GeneratorConfig {
        mc_runs: 20,
        seed: 7,
        ..GeneratorConfig::scaled(60)
    };
    let (cohort, manifest) = generate(&config)?;
    let stroke = cohort
        .patients()
        .iter()
        .filter(|p| p.label() == PatientLabel::Stroke)
        .count();
    println!(
        "{} patients ({stroke} stroke, {} TIA), {} images, {} MC runs each",
        cohort.len(),
        cohort.len() - stroke,
        cohort.image_count(),
        config.mc_runs
    );
    println!("realized counts: {:?}", manifest.realized);

    for p in cohort.patients().iter().take(4) {
        let lesion = p
            .images()
            .iter()
            .filter(|im| im.true_label == ImageLabel::Stroke)
            .count();
        println!(
            "  {} {:>6}: {} slices, {lesion} with visible lesion",
            p.patient_id(),
            p.label().as_str(),
            p.images().len()
        );
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cohort.csv");
    serialize_samples_file(&cohort, &path)?;
    let back = parse_samples_file(&path)?;
    assert_eq!(back, cohort);
    println!(
        "round trip through {} bytes of CSV is lossless",
        std::fs::metadata(&path)?.len()
    );

    // same seed, same cohort
    assert_eq!(generate(&config)?.0, cohort);
    Ok(())
}
