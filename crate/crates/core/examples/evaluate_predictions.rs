//! Score a set of patient predictions: accuracy with a Wilson interval,
//! calibration with Sanders' score, ROC/AUC of the stroke probability, and
//! how well each uncertainty measure flags the wrong predictions.
//!
//! `cargo run --example evaluate_predictions`

use mcd_aggregate::evalmetrics::{default_removal_grid, evaluate, ScoredOutcome, DEFAULT_Z};
use mcd_aggregate::measures::UncertaintyMeasure;
use mcd_aggregate::report::write_evaluation;
use rand::Rng;

pub fn main() -> mcd_aggregate::Result<()> {
    // A simulated model whose uncertainty rises as its probability nears 0.5,
    // so wrong answers tend to be the uncertain ones.
    let mut rng = mcd_aggregate::seeds::rng(4);
    let outcomes: Vec<ScoredOutcome> = (0..400)
        .map(|_| {
            let p: f64 = rng.random();
            let is_stroke = rng.random::<f64>() < p;
            let closeness = 1.0 - 2.0 * (p - 0.5).abs();
            let mut u = |scale: f64| scale * closeness + 0.05 * rng.random::<f64>();
            ScoredOutcome {
                p_stroke: p,
                is_stroke,
                correct: (p > 0.5) == is_stroke,
                uncertainty: Some([u(0.05), u(0.5), u(0.69), u(0.1), u(0.05), u(0.25)]),
            }
        })
        .collect();

    let report = evaluate(&outcomes, DEFAULT_Z, &default_removal_grid())?;
    let a = report.accuracy;
    println!(
        "accuracy {}/{} = {:.3}, 95% CI [{:.3}, {:.3}]",
        a.correct, a.total, a.accuracy, a.lower, a.upper
    );
    println!("Sanders' calibration score {:.4}", report.sanders);
    if let Some(roc) = &report.discrimination {
        println!("stroke discrimination AUC {:.3}", roc.auc);
    }
    for m in UncertaintyMeasure::ALL {
        let removal = &report.error_detection.iter().find(|r| r.measure == m).unwrap().removal;
        let last = removal.points.last().unwrap();
        println!(
            "{:>4}: error-detection AUC {:.3}; accuracy {:.3} after dropping the {:.0}% most uncertain",
            m.as_str(),
            report.error_detection_auc(m).unwrap_or(f64::NAN),
            last.accuracy,
            100.0 * last.fraction
        );
    }

    let dir = tempfile::tempdir()?;
    write_evaluation(dir.path(), &report, DEFAULT_Z)?;
    let mut files: Vec<String> = std::fs::read_dir(dir.path())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.sort();
    println!("plot data written: {}", files.join(", "));
    Ok(())
}
