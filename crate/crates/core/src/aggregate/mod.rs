//! Patient-level diagnosis from per-image summaries.
//!
//! Two network families consume the image-level results:
//!
//! * fully connected networks over the five images with the highest stroke
//!   probability: a plain FC-NN on the five probabilities, or five
//!   weight-shared pathways (one per image) whose outputs are concatenated
//!   when each image contributes several inputs;
//! * 1D CNNs over all images of a patient in slice order, with global max
//!   pooling so any sequence length of at least the kernel size works.
//!
//! The Maximum rule (patient probability = largest image probability) is the
//! parameterless baseline. Networks are trained with mini-batch Adam and
//! retrospective early stopping, and predict with Monte-Carlo dropout so each
//! patient gets the same uncertainty summary as an image.

mod features;
mod models;
mod predict;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::evalmetrics::ScoredOutcome;
use crate::measures::{UncertaintyMeasure, UncertaintySummary};
use crate::predstore::PatientLabel;

pub use features::{build_features, maximum_method, select_top5, TOP_K};
pub use models::{build_model, build_model_with, default_dropout, AggregationModel, ModelConfig};
pub use predict::{predict_patient, DEFAULT_MC_RUNS};
pub use train::{train_aggregator, EpochLog, TrainConfig, TrainingOutcome};

/// Per-image inputs handed to an aggregation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Mean stroke probability only.
    P,
    /// Stroke probability plus VR, PE, MI and Var.
    PVrPeMiVar,
    /// Stroke probability plus epistemic and aleatoric uncertainty.
    PEpiAlea,
    /// The 100 stroke-class histogram bins.
    Hist,
}

impl InputKind {
    pub const ALL: [InputKind; 4] = [
        InputKind::P,
        InputKind::PVrPeMiVar,
        InputKind::PEpiAlea,
        InputKind::Hist,
    ];

    pub fn channels(self) -> usize {
        match self {
            InputKind::P => 1,
            InputKind::PVrPeMiVar => 5,
            InputKind::PEpiAlea => 3,
            InputKind::Hist => crate::measures::HIST_BINS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::P => "p",
            InputKind::PVrPeMiVar => "p-vr-pe-mi-var",
            InputKind::PEpiAlea => "p-epi-alea",
            InputKind::Hist => "hist",
        }
    }

    /// Whether the input carries uncertainty information beyond P.
    pub fn has_uncertainty(self) -> bool {
        self != InputKind::P
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureVariant {
    Max,
    Fcnn(InputKind),
    Cnn1d(InputKind),
}

impl FeatureVariant {
    /// Maximum rule followed by the eight network variants, FC-NNs first.
    pub const ALL: [FeatureVariant; 9] = [
        FeatureVariant::Max,
        FeatureVariant::Fcnn(InputKind::P),
        FeatureVariant::Fcnn(InputKind::PVrPeMiVar),
        FeatureVariant::Fcnn(InputKind::PEpiAlea),
        FeatureVariant::Fcnn(InputKind::Hist),
        FeatureVariant::Cnn1d(InputKind::P),
        FeatureVariant::Cnn1d(InputKind::PVrPeMiVar),
        FeatureVariant::Cnn1d(InputKind::PEpiAlea),
        FeatureVariant::Cnn1d(InputKind::Hist),
    ];

    /// Stable index into [`FeatureVariant::ALL`], used for seed derivation.
    pub fn ordinal(self) -> usize {
        Self::ALL.iter().position(|v| *v == self).unwrap()
    }

    pub fn family(self) -> &'static str {
        match self {
            FeatureVariant::Max => "max",
            FeatureVariant::Fcnn(_) => "fcnn",
            FeatureVariant::Cnn1d(_) => "cnn1d",
        }
    }

    pub fn input(self) -> Option<InputKind> {
        match self {
            FeatureVariant::Max => None,
            FeatureVariant::Fcnn(k) | FeatureVariant::Cnn1d(k) => Some(k),
        }
    }

    pub fn is_network(self) -> bool {
        self != FeatureVariant::Max
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.input() {
            None => f.write_str("max"),
            Some(k) => write!(f, "{}-{}", self.family(), k.as_str()),
        }
    }
}

impl FromStr for FeatureVariant {
    type Err = String;

    /// Accepts the display names (`fcnn-p-epi-alea`) and the letters `a`-`h`
    /// of the architecture overview (FC-NN a-d, 1D-CNN e-h).
    fn from_str(s: &str) -> Result<Self, String> {
        let letters = ["a", "b", "c", "d", "e", "f", "g", "h"];
        if let Some(i) = letters.iter().position(|l| *l == s) {
            return Ok(Self::ALL[i + 1]);
        }
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

impl Serialize for FeatureVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated variant list; `all` expands to every variant.
pub fn parse_variant_list(s: &str) -> Result<Vec<FeatureVariant>, String> {
    if s.trim() == "all" {
        return Ok(FeatureVariant::ALL.to_vec());
    }
    let mut out: Vec<FeatureVariant> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v: FeatureVariant = part.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err("no variants given".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    /// `(tia, stroke)` probabilities.
    pub mean_prob: [f64; 2],
    /// Patient-level uncertainty; absent for the Maximum rule.
    pub summary: Option<UncertaintySummary>,
    pub predicted_label: PatientLabel,
}

impl PatientPrediction {
    pub fn p_stroke(&self) -> f64 {
        self.mean_prob[1]
    }

    /// Uncertainty measures in [`UncertaintyMeasure::ALL`] order.
    pub fn uncertainty(&self) -> Option<[f64; 6]> {
        self.summary
            .as_ref()
            .map(|s| UncertaintyMeasure::ALL.map(|m| s.measure(m)))
    }
}

/// A patient's prediction together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcome {
    pub patient_id: String,
    pub true_label: PatientLabel,
    pub prediction: PatientPrediction,
}

impl PatientOutcome {
    pub fn scored(&self) -> ScoredOutcome {
        ScoredOutcome {
            p_stroke: self.prediction.p_stroke(),
            is_stroke: self.true_label == PatientLabel::Stroke,
            correct: self.prediction.predicted_label == self.true_label,
            uncertainty: self.prediction.uncertainty(),
        }
    }
}
