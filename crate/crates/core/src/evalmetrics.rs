//! Discrimination, calibration and selective-prediction metrics.

use serde::{Deserialize, Serialize};

use crate::measures::{bin_index, UncertaintyMeasure};
use crate::{Error, Result};

/// Two-sided 95% normal quantile.
pub const DEFAULT_Z: f64 = 1.959964;
pub const CALIBRATION_INTERVALS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Accuracy with its Wilson score interval.
pub fn accuracy_with_wilson(correct: usize, total: usize, z: f64) -> Result<WilsonInterval> {
    if total == 0 {
        return Err(Error::Empty("accuracy of zero predictions".into()));
    }
    if correct > total {
        return Err(Error::Config(format!("{correct} correct out of {total}")));
    }
    let n = total as f64;
    let p = correct as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Ok(WilsonInterval {
        correct,
        total,
        accuracy: p,
        // the bounds touch 0 and 1 exactly at the extremes
        lower: if correct == 0 {
            0.0
        } else {
            (center - half).clamp(0.0, 1.0)
        },
        upper: if correct == total {
            1.0
        } else {
            (center + half).clamp(0.0, 1.0)
        },
    })
}

/// Closed intervals intersect.
pub fn ci_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    /// 1-based interval index.
    pub index: usize,
    pub representative: f64,
    pub count: usize,
    /// Fraction of stroke events; absent for empty intervals.
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub rows: Vec<CalibrationRow>,
    pub total: usize,
}

/// Bins predicted stroke probabilities into twenty intervals
/// `[0, 0.05), [0.05, 0.1), ..., [0.95, 1]`.
pub fn calibration(probabilities: &[f64], labels: &[bool]) -> Result<CalibrationTable> {
    if probabilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities but {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let mut counts = [0usize; CALIBRATION_INTERVALS];
    let mut events = [0usize; CALIBRATION_INTERVALS];
    for (&p, &y) in probabilities.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
        let k = bin_index(p, CALIBRATION_INTERVALS);
        counts[k] += 1;
        events[k] += usize::from(y);
    }
    let rows = (0..CALIBRATION_INTERVALS)
        .map(|k| CalibrationRow {
            index: k + 1,
            representative: (k as f64 + 0.5) / CALIBRATION_INTERVALS as f64,
            count: counts[k],
            observed: (counts[k] > 0).then(|| events[k] as f64 / counts[k] as f64),
        })
        .collect();
    Ok(CalibrationTable {
        rows,
        total: probabilities.len(),
    })
}

/// Sanders' score: count-weighted mean squared gap between observed event
/// fraction and interval representative. Zero is perfect.
pub fn sanders_score(table: &CalibrationTable) -> Result<f64> {
    let n: usize = table.rows.iter().map(|r| r.count).sum();
    if n == 0 {
        return Err(Error::Empty("calibration table has no observations".into()));
    }
    let sum: f64 = table
        .rows
        .iter()
        .filter_map(|r| r.observed.map(|y| r.count as f64 * (y - r.representative).powi(2)))
        .sum();
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC by sweeping a threshold over the distinct scores, highest first.
/// Tied scores form one diagonal step, so the trapezoidal AUC equals the
/// Mann-Whitney statistic with half credit for ties. The area is accumulated
/// in integer units of `1 / (2 P N)` and divided once, so it is exact up to
/// that final rounding.
pub fn roc_auc(scores: &[f64], is_positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != is_positive.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            is_positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("NaN score".into()));
    }
    let positives = is_positive.iter().filter(|&&p| p).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateInput(format!(
            "need both classes, got {positives} positive and {negatives} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut tp_prev, mut fp_prev) = (0usize, 0usize);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if is_positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - fp_prev) * (tp + tp_prev)) as u128;
        (tp_prev, fp_prev) = (tp, fp);
        points.push((fp as f64 / n, tp as f64 / p));
    }
    let auc = twice_area as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalPoint {
    pub fraction: f64,
    pub retained: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalCurve {
    pub points: Vec<RemovalPoint>,
}

/// `0, 0.05, ..., 0.50`.
pub fn default_removal_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 20.0).collect()
}

/// Accuracy on the items kept after discarding the most uncertain fraction
/// `f` of them; `ceil((1 - f) N)` items are kept, ties in uncertainty are
/// removed in input order.
pub fn removal_curve(uncertainties: &[f64], is_correct: &[bool], grid: &[f64]) -> Result<RemovalCurve> {
    if uncertainties.len() != is_correct.len() {
        return Err(Error::Shape(format!(
            "{} uncertainties but {} outcomes",
            uncertainties.len(),
            is_correct.len()
        )));
    }
    if uncertainties.is_empty() {
        return Err(Error::Empty("removal curve of zero predictions".into()));
    }
    let n = uncertainties.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainties[b].total_cmp(&uncertainties[a]));
    // suffix sums of correctness over the removal order
    let mut correct_from = vec![0usize; n + 1];
    for k in (0..n).rev() {
        correct_from[k] = correct_from[k + 1] + usize::from(is_correct[order[k]]);
    }
    let points = grid
        .iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("removal fraction {f} outside [0, 1]")));
            }
            let retained = (((1.0 - f) * n as f64) - 1e-9).ceil().max(0.0) as usize;
            if retained == 0 {
                return Err(Error::Config(format!("removal fraction {f} leaves no predictions")));
            }
            Ok(RemovalPoint {
                fraction: f,
                retained,
                accuracy: correct_from[n - retained] as f64 / retained as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RemovalCurve { points })
}

/// One scored prediction, image- or patient-level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredOutcome {
    pub p_stroke: f64,
    pub is_stroke: bool,
    pub correct: bool,
    /// Uncertainty measures in [`UncertaintyMeasure::ALL`] order.
    pub uncertainty: Option<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub measure: UncertaintyMeasure,
    /// Error detection: positives are the wrong predictions. Absent when all
    /// predictions are right (or all wrong).
    pub roc: Option<RocCurve>,
    pub removal: RemovalCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: WilsonInterval,
    pub calibration: CalibrationTable,
    pub sanders: f64,
    /// ROC of the stroke probability against the true label; absent for
    /// single-class inputs.
    pub discrimination: Option<RocCurve>,
    pub error_detection: Vec<MeasureReport>,
}

impl EvaluationReport {
    pub fn error_detection_auc(&self, measure: UncertaintyMeasure) -> Option<f64> {
        self.error_detection
            .iter()
            .find(|m| m.measure == measure)
            .and_then(|m| m.roc.as_ref())
            .map(|r| r.auc)
    }
}

pub fn evaluate(outcomes: &[ScoredOutcome], z: f64, grid: &[f64]) -> Result<EvaluationReport> {
    if outcomes.is_empty() {
        return Err(Error::Empty("no predictions to evaluate".into()));
    }
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let accuracy = accuracy_with_wilson(correct, outcomes.len(), z)?;
    let probs: Vec<f64> = outcomes.iter().map(|o| o.p_stroke).collect();
    let labels: Vec<bool> = outcomes.iter().map(|o| o.is_stroke).collect();
    let calibration = calibration(&probs, &labels)?;
    let sanders = sanders_score(&calibration)?;
    let discrimination = match roc_auc(&probs, &labels) {
        Ok(r) => Some(r),
        Err(Error::DegenerateInput(_)) => None,
        Err(e) => return Err(e),
    };
    let mut error_detection = Vec::new();
    if outcomes.iter().all(|o| o.uncertainty.is_some()) {
        let wrong: Vec<bool> = outcomes.iter().map(|o| !o.correct).collect();
        let right: Vec<bool> = outcomes.iter().map(|o| o.correct).collect();
        for (k, measure) in UncertaintyMeasure::ALL.into_iter().enumerate() {
            let u: Vec<f64> = outcomes.iter().map(|o| o.uncertainty.unwrap()[k]).collect();
            let roc = match roc_auc(&u, &wrong) {
                Ok(r) => Some(r),
                Err(Error::DegenerateInput(_)) => None,
                Err(e) => return Err(e),
            };
            error_detection.push(MeasureReport {
                measure,
                roc,
                removal: removal_curve(&u, &right, grid)?,
            });
        }
    }
    Ok(EvaluationReport {
        accuracy,
        calibration,
        sanders,
        discrimination,
        error_detection,
    })
}
