use super::{FeatureVariant, InputKind, PatientPrediction};
use crate::measures::UncertaintySummary;
use crate::nnkernel::Tensor;
use crate::predstore::{PatientLabel, PatientRecord};
use crate::{Error, Result};

/// Images fed to the fully connected aggregators.
pub const TOP_K: usize = 5;

/// Minimum sequence length for the 1D CNNs (the kernel length).
const MIN_SEQUENCE: usize = 3;

fn check_aligned(patient: &PatientRecord, summaries: &[UncertaintySummary]) -> Result<()> {
    if patient.images().len() != summaries.len() {
        return Err(Error::Shape(format!(
            "patient {} has {} images but {} summaries",
            patient.patient_id(),
            patient.images().len(),
            summaries.len()
        )));
    }
    Ok(())
}

/// Indices of the five images with the highest mean stroke probability,
/// highest first; equal probabilities go to the lower slice index.
pub fn select_top5(patient: &PatientRecord, summaries: &[UncertaintySummary]) -> Result<[usize; TOP_K]> {
    check_aligned(patient, summaries)?;
    let images = patient.images();
    if images.len() < TOP_K {
        return Err(Error::TooFewImages {
            patient: patient.patient_id().to_string(),
            found: images.len(),
            required: TOP_K,
        });
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.sort_by(|&a, &b| {
        summaries[b]
            .p_stroke()
            .total_cmp(&summaries[a].p_stroke())
            .then(images[a].slice_index.cmp(&images[b].slice_index))
    });
    let mut top = [0; TOP_K];
    top.copy_from_slice(&order[..TOP_K]);
    Ok(top)
}

fn image_channels(s: &UncertaintySummary, kind: InputKind) -> Vec<f64> {
    match kind {
        InputKind::P => vec![s.p_stroke()],
        InputKind::PVrPeMiVar => vec![s.p_stroke(), s.vr, s.pe, s.mi, s.var],
        InputKind::PEpiAlea => vec![s.p_stroke(), s.epi, s.alea],
        InputKind::Hist => s.hist[1].clone(),
    }
}

/// Network input for one patient.
///
/// * `fcnn-p`: a 1 x 5 row of the top-five stroke probabilities;
/// * other FC-NN variants: 5 x d, one row per top-five image;
/// * 1D-CNN variants: n x d over all images in slice order.
pub fn build_features(
    patient: &PatientRecord,
    summaries: &[UncertaintySummary],
    variant: FeatureVariant,
) -> Result<Tensor> {
    check_aligned(patient, summaries)?;
    match variant {
        FeatureVariant::Max => Err(Error::Config("the maximum rule takes no features".into())),
        FeatureVariant::Fcnn(InputKind::P) => {
            let top = select_top5(patient, summaries)?;
            Ok(Tensor::row_vector(
                top.iter().map(|&i| summaries[i].p_stroke()).collect(),
            ))
        }
        FeatureVariant::Fcnn(kind) => {
            let top = select_top5(patient, summaries)?;
            let rows: Vec<Vec<f64>> = top.iter().map(|&i| image_channels(&summaries[i], kind)).collect();
            Tensor::from_rows(&rows)
        }
        FeatureVariant::Cnn1d(kind) => {
            if summaries.len() < MIN_SEQUENCE {
                return Err(Error::TooFewImages {
                    patient: patient.patient_id().to_string(),
                    found: summaries.len(),
                    required: MIN_SEQUENCE,
                });
            }
            let rows: Vec<Vec<f64>> = summaries.iter().map(|s| image_channels(s, kind)).collect();
            Tensor::from_rows(&rows)
        }
    }
}

/// Patient stroke probability = largest image stroke probability. No
/// patient-level uncertainty is available.
pub fn maximum_method(patient: &PatientRecord, summaries: &[UncertaintySummary]) -> Result<PatientPrediction> {
    check_aligned(patient, summaries)?;
    let m = summaries
        .iter()
        .map(UncertaintySummary::p_stroke)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PatientPrediction {
        mean_prob: [1.0 - m, m],
        summary: None,
        predicted_label: if m > 0.5 {
            PatientLabel::Stroke
        } else {
            PatientLabel::Tia
        },
    })
}
