//! Synthetic cohort properties and cross-validation orchestration.

use mcd_aggregate::aggregate::{FeatureVariant, InputKind};
use mcd_aggregate::evalmetrics::{removal_curve, roc_auc};
use mcd_aggregate::measures::summarize;
use mcd_aggregate::pipeline::{make_folds, run_experiment, ExperimentConfig, ImageSummaries, FOLDS};
use mcd_aggregate::predstore::{read_samples, to_csv_string, CohortDataset};
use mcd_aggregate::synthcohort::{degenerate_cohort, generate, DegenerateKind, GeneratorConfig};
use std::f64::consts::LN_2;

fn cohort(patients: usize, difficulty: f64, runs: usize, seed: u64) -> CohortDataset {
    generate(&GeneratorConfig {
        difficulty_mix: difficulty,
        mc_runs: runs,
        seed,
        ..GeneratorConfig::scaled(patients)
    })
    .unwrap()
    .0
}

/// Image-level AUC of predictive entropy for detecting wrong predictions.
fn error_detection_auc(d: &CohortDataset) -> f64 {
    let (mut pe, mut wrong) = (Vec::new(), Vec::new());
    for im in d.patients().iter().flat_map(|p| p.images()) {
        let s = summarize(&im.samples);
        pe.push(s.pe);
        wrong.push(s.predicted_class != im.true_label);
    }
    roc_auc(&pe, &wrong).unwrap().auc
}

#[test]
fn generated_cohorts_satisfy_the_file_invariants() {
    let d = cohort(30, 0.1, 7, 1);
    assert_eq!(read_samples(to_csv_string(&d).as_bytes()).unwrap(), d);
    for p in d.patients() {
        assert!((21..=46).contains(&p.images().len()));
    }
}

#[test]
fn default_cohort_shape() {
    let (d, m) = generate(&GeneratorConfig {
        mc_runs: 1,
        ..GeneratorConfig::default()
    })
    .unwrap();
    assert_eq!(d.len(), 511);
    assert_eq!(m.realized.stroke_patients, 355);
    assert_eq!(m.realized.images, d.image_count());
    // 511 binomial draws around the target mean of 15188 images
    assert!((d.image_count() as f64 - 15188.0).abs() < 4.0 * (511.0f64 * 25.0 * 0.25).sqrt());
}

#[test]
fn error_detection_improves_with_difficulty() {
    let aucs: Vec<f64> = [0.01, 0.05, 0.15]
        .iter()
        .map(|&dm| error_detection_auc(&cohort(100, dm, 50, 11)))
        .collect();
    assert!(aucs[0] > 0.5, "{aucs:?}");
    assert!(aucs[0] < aucs[1] && aucs[1] < aucs[2], "{aucs:?}");
}

#[test]
fn concentration_controls_spread() {
    let mean_var = |kappa: f64| {
        let d = generate(&GeneratorConfig {
            concentration: kappa,
            mc_runs: 30,
            seed: 3,
            ..GeneratorConfig::scaled(20)
        })
        .unwrap()
        .0;
        let images: Vec<_> = d.patients().iter().flat_map(|p| p.images()).collect();
        images.iter().map(|im| summarize(&im.samples).var).sum::<f64>() / images.len() as f64
    };
    assert!(mean_var(40.0) < mean_var(10.0));
}

#[test]
fn generation_is_independent_of_thread_count() {
    let cfg = GeneratorConfig {
        mc_runs: 5,
        seed: 9,
        ..GeneratorConfig::scaled(40)
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| generate(&cfg)).unwrap();
    let b = four.install(|| generate(&cfg)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn degenerate_fixtures() {
    let d = degenerate_cohort(DegenerateKind::AllUniform);
    for im in d.patients().iter().flat_map(|p| p.images()) {
        let s = summarize(&im.samples);
        assert_eq!((s.pe, s.var), (LN_2, 0.0));
    }
    let d = degenerate_cohort(DegenerateKind::AllConfidentCorrect);
    let (mut u, mut ok) = (Vec::new(), Vec::new());
    for im in d.patients().iter().flat_map(|p| p.images()) {
        let s = summarize(&im.samples);
        u.push(s.pe);
        ok.push(s.predicted_class == im.true_label);
    }
    let c = removal_curve(&u, &ok, &mcd_aggregate::evalmetrics::default_removal_grid()).unwrap();
    assert!(c.points.iter().all(|p| p.accuracy == 1.0));
    assert!(make_folds(&degenerate_cohort(DegenerateKind::SinglePatient), 0).is_err());
}

#[test]
fn fold_plan_properties() {
    let d = cohort(60, 0.1, 2, 4);
    let plan = make_folds(&d, 21).unwrap();
    assert_eq!(plan, make_folds(&d, 21).unwrap());
    assert!(
        plan.max_stratification_gap() <= 0.05 + 1e-12,
        "{}",
        plan.max_stratification_gap()
    );
    for f in &plan.folds {
        for id in &f.test {
            assert!(!f.training_ids().contains(id) && !f.valid2.contains(id));
        }
    }
}

#[test]
fn experiment_bookkeeping() {
    let d = generate(&GeneratorConfig {
        difficulty_mix: 0.0,
        label_noise: 0.0,
        mc_runs: 20,
        seed: 6,
        ..GeneratorConfig::scaled(30)
    })
    .unwrap()
    .0;
    let variants = [
        FeatureVariant::Max,
        FeatureVariant::Fcnn(InputKind::P),
        FeatureVariant::Cnn1d(InputKind::PEpiAlea),
    ];
    let cfg = ExperimentConfig {
        seed: 2,
        mc_runs: 40,
        ..ExperimentConfig::default()
    };
    let r = run_experiment(&d, &variants, &cfg).unwrap();
    // one summary per image for the whole experiment
    assert_eq!(r.summaries_computed, d.image_count());
    assert_eq!(ImageSummaries::compute(&d).computed(), d.image_count());
    for v in variants {
        let pooled = r.pooled_report(v).unwrap();
        let (mut correct, mut total) = (0, 0);
        for f in 0..FOLDS {
            let out = r.cell(f, v).unwrap().outcome.as_ref().unwrap();
            correct += out.report.accuracy.correct;
            total += out.report.accuracy.total;
        }
        assert_eq!((pooled.accuracy.correct, pooled.accuracy.total), (correct, total));
        assert_eq!(total, d.len());
        // a well-separated cohort
        assert!(pooled.accuracy.accuracy >= 0.9, "{v}: {}", pooled.accuracy.accuracy);
    }
    let again = run_experiment(&d, &variants, &cfg).unwrap();
    assert_eq!(format!("{:?}", r.cells), format!("{:?}", again.cells));
}
