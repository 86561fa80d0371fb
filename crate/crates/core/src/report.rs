//! Text outputs: per-image measure tables, patient prediction files, plot
//! data (calibration, ROC, removal curves), metric JSON and the accuracy
//! matrix of a cross-validation run. Floats use the shortest round-trip
//! representation so outputs are byte-stable.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::aggregate::{EpochLog, PatientOutcome};
use crate::evalmetrics::{CalibrationTable, EvaluationReport, RemovalCurve, RocCurve, ScoredOutcome};
use crate::measures::{UncertaintyMeasure, UncertaintySummary, HIST_BINS};
use crate::pipeline::AccuracyRow;
use crate::predstore::{CohortDataset, PatientLabel};
use crate::{fsutil, Error, Result};

pub const MEASURES_HEADER: [&str; 10] = [
    "patient_id",
    "image_id",
    "p_bar_stroke",
    "var",
    "vr",
    "pe",
    "mi",
    "epi",
    "alea",
    "predicted_class",
];

pub const PREDICTIONS_HEADER: [&str; 10] = [
    "patient_id",
    "p_bar_stroke",
    "var",
    "vr",
    "pe",
    "mi",
    "epi",
    "alea",
    "predicted_label",
    "true_label",
];

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `summaries[i]` belongs to `dataset.patients()[i]`, images in slice order.
pub fn write_measures_csv<W: Write>(
    dataset: &CohortDataset,
    summaries: &[Vec<UncertaintySummary>],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MEASURES_HEADER)?;
    for (patient, sums) in dataset.patients().iter().zip(summaries) {
        for (image, s) in patient.images().iter().zip(sums) {
            w.write_record([
                patient.patient_id().to_string(),
                image.image_id.clone(),
                num(s.p_stroke()),
                num(s.var),
                num(s.vr),
                num(s.pe),
                num(s.mi),
                num(s.epi),
                num(s.alea),
                s.predicted_class.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide table of the stroke-class histogram, `hist_bin_1..hist_bin_100`.
pub fn write_histogram_csv<W: Write>(
    dataset: &CohortDataset,
    summaries: &[Vec<UncertaintySummary>],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["patient_id".to_string(), "image_id".to_string()];
    header.extend((1..=HIST_BINS).map(|j| format!("hist_bin_{j}")));
    w.write_record(&header)?;
    for (patient, sums) in dataset.patients().iter().zip(summaries) {
        for (image, s) in patient.images().iter().zip(sums) {
            let mut row = vec![patient.patient_id().to_string(), image.image_id.clone()];
            row.extend(s.hist[1].iter().map(|&v| num(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub patient_id: String,
    pub p_stroke: f64,
    /// In [`UncertaintyMeasure::ALL`] order; absent for the Maximum rule.
    pub uncertainty: Option<[f64; 6]>,
    pub predicted_label: PatientLabel,
    pub true_label: PatientLabel,
}

impl PredictionRow {
    pub fn scored(&self) -> ScoredOutcome {
        ScoredOutcome {
            p_stroke: self.p_stroke,
            is_stroke: self.true_label == PatientLabel::Stroke,
            correct: self.predicted_label == self.true_label,
            uncertainty: self.uncertainty,
        }
    }
}

impl From<&PatientOutcome> for PredictionRow {
    fn from(o: &PatientOutcome) -> Self {
        Self {
            patient_id: o.patient_id.clone(),
            p_stroke: o.prediction.p_stroke(),
            uncertainty: o.prediction.uncertainty(),
            predicted_label: o.prediction.predicted_label,
            true_label: o.true_label,
        }
    }
}

pub fn write_predictions_csv<W: Write>(rows: &[PredictionRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PREDICTIONS_HEADER)?;
    for r in rows {
        let mut rec = vec![r.patient_id.clone(), num(r.p_stroke)];
        match r.uncertainty {
            Some(u) => rec.extend(u.iter().map(|&v| num(v))),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(r.predicted_label.to_string());
        rec.push(r.true_label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().ne(PREDICTIONS_HEADER.iter().copied()) {
        return Err(Error::parse(
            1,
            format!("header must be exactly `{}`", PREDICTIONS_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            if e.is_io_error() {
                Error::Csv(e)
            } else {
                Error::parse(line, format!("malformed row: {e}"))
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let float = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("{} is not a number", PREDICTIONS_HEADER[i])))
        };
        let label = |i: usize| -> Result<PatientLabel> { rec[i].parse().map_err(|e: String| Error::parse(line, e)) };
        let p_stroke = float(1)?;
        if !(0.0..=1.0).contains(&p_stroke) {
            return Err(Error::parse(line, format!("probability out of range: {p_stroke}")));
        }
        let uncertainty = if (2..8).all(|i| rec[i].is_empty()) {
            None
        } else {
            let mut u = [0.0; 6];
            for (k, v) in u.iter_mut().enumerate() {
                *v = float(k + 2)?;
            }
            Some(u)
        };
        rows.push(PredictionRow {
            patient_id: rec[0].to_string(),
            p_stroke,
            uncertainty,
            predicted_label: label(8)?,
            true_label: label(9)?,
        });
    }
    Ok(rows)
}

pub fn calibration_csv(table: &CalibrationTable) -> String {
    let mut s = String::from("interval,representative,count,observed\n");
    for r in &table.rows {
        s += &format!(
            "{},{},{},{}\n",
            r.index,
            num(r.representative),
            r.count,
            opt(r.observed)
        );
    }
    s
}

pub fn roc_csv(roc: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in &roc.points {
        s += &format!("{},{}\n", num(*x), num(*y));
    }
    s
}

pub fn removal_csv(curve: &RemovalCurve) -> String {
    let mut s = String::from("fraction_removed,retained,accuracy\n");
    for p in &curve.points {
        s += &format!("{},{},{}\n", num(p.fraction), p.retained, num(p.accuracy));
    }
    s
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,valid_loss,valid_accuracy\n");
    for e in log {
        s += &format!(
            "{},{},{},{},{}\n",
            e.epoch,
            num(e.train_loss),
            num(e.train_accuracy),
            opt(e.valid_loss),
            opt(e.valid_accuracy)
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub sanders: f64,
    pub auc: Option<f64>,
    /// Error-detection AUC per uncertainty measure.
    pub error_detection_auc: IndexMap<String, Option<f64>>,
}

impl MetricsSummary {
    pub fn from_report(report: &EvaluationReport, z: f64) -> Self {
        Self {
            n: report.accuracy.total,
            correct: report.accuracy.correct,
            accuracy: report.accuracy.accuracy,
            ci_lower: report.accuracy.lower,
            ci_upper: report.accuracy.upper,
            z,
            sanders: report.sanders,
            auc: report.discrimination.as_ref().map(|r| r.auc),
            error_detection_auc: report
                .error_detection
                .iter()
                .map(|m| (m.measure.to_string(), m.roc.as_ref().map(|r| r.auc)))
                .collect(),
        }
    }
}

/// Writes `metrics.json`, `calibration.csv`, `roc.csv` and per-measure
/// `roc_<measure>.csv` / `removal_<measure>.csv` into `dir`.
pub fn write_evaluation(dir: &Path, report: &EvaluationReport, z: f64) -> Result<()> {
    fsutil::write_json_atomic(&dir.join("metrics.json"), &MetricsSummary::from_report(report, z))?;
    fsutil::write_string_atomic(&dir.join("calibration.csv"), &calibration_csv(&report.calibration))?;
    if let Some(roc) = &report.discrimination {
        fsutil::write_string_atomic(&dir.join("roc.csv"), &roc_csv(roc))?;
    }
    for m in &report.error_detection {
        let name = m.measure.as_str();
        if let Some(roc) = &m.roc {
            fsutil::write_string_atomic(&dir.join(format!("roc_{name}.csv")), &roc_csv(roc))?;
        }
        fsutil::write_string_atomic(&dir.join(format!("removal_{name}.csv")), &removal_csv(&m.removal))?;
    }
    Ok(())
}

pub fn accuracy_table_csv(rows: &[AccuracyRow]) -> String {
    let mut s = String::from("variant,family,input,correct,total,accuracy,ci_lower,ci_upper,sanders,auc_pe,error\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.family,
            r.input,
            r.correct.map(|v| v.to_string()).unwrap_or_default(),
            r.total.map(|v| v.to_string()).unwrap_or_default(),
            opt(r.accuracy),
            opt(r.ci_lower),
            opt(r.ci_upper),
            opt(r.sanders),
            opt(r.auc_pe),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    s
}

/// Column order of the per-measure fields, for readers of the CSVs.
pub fn measure_columns() -> [&'static str; 6] {
    UncertaintyMeasure::ALL.map(UncertaintyMeasure::as_str)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip() {
        let rows = vec![
            PredictionRow {
                patient_id: "P1".into(),
                p_stroke: 0.75,
                uncertainty: Some([0.01, 0.2, 0.5, 0.03, 0.01, 0.17]),
                predicted_label: PatientLabel::Stroke,
                true_label: PatientLabel::Tia,
            },
            PredictionRow {
                patient_id: "P2".into(),
                p_stroke: 0.1,
                uncertainty: None,
                predicted_label: PatientLabel::Tia,
                true_label: PatientLabel::Tia,
            },
        ];
        let mut buf = Vec::new();
        write_predictions_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label\n"));
        assert!(text.contains("P2,0.1,,,,,,,tia,tia"));
        assert_eq!(read_predictions_csv(buf.as_slice()).unwrap(), rows);
        assert!(!rows[0].scored().correct);
    }

    #[test]
    fn predictions_reject_bad_rows() {
        let text = "patient_id,p_bar_stroke,var,vr,pe,mi,epi,alea,predicted_label,true_label\nP1,1.5,,,,,,,tia,tia\n";
        let err = read_predictions_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn measure_column_order_matches_header() {
        assert_eq!(&PREDICTIONS_HEADER[2..8], &measure_columns());
        assert_eq!(&MEASURES_HEADER[3..9], &measure_columns());
    }
}
