//! Summaries of one predictive distribution: mean probability, MC-dropout
//! variance, variation ratio, predictive entropy, mutual information, the
//! epistemic / aleatoric split and the 100-bin histogram.
//!
//! Conventions: logarithms are natural (the binary entropy maximum is
//! `ln 2`), `0 ln 0 = 0`, a run predicts stroke only when its stroke
//! probability strictly exceeds the threshold, and variation-ratio mode ties
//! resolve to no-stroke.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::predstore::{ImageLabel, PredictiveSamples};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const HIST_BINS: usize = 100;

/// Small negative mutual information from floating-point cancellation is
/// clamped to zero when it lies within this distance.
pub const MI_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    /// Mean probability per class, `(no_stroke, stroke)`.
    pub mean_prob: [f64; 2],
    pub var: f64,
    pub vr: f64,
    pub pe: f64,
    pub mi: f64,
    pub epi: f64,
    pub alea: f64,
    /// Normalized histogram per class, [`HIST_BINS`] bins each.
    pub hist: [Vec<f64>; 2],
    pub predicted_class: ImageLabel,
}

impl UncertaintySummary {
    pub fn p_stroke(&self) -> f64 {
        self.mean_prob[1]
    }

    pub fn measure(&self, m: UncertaintyMeasure) -> f64 {
        match m {
            UncertaintyMeasure::Var => self.var,
            UncertaintyMeasure::Vr => self.vr,
            UncertaintyMeasure::Pe => self.pe,
            UncertaintyMeasure::Mi => self.mi,
            UncertaintyMeasure::Epi => self.epi,
            UncertaintyMeasure::Alea => self.alea,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    Var,
    Vr,
    Pe,
    Mi,
    Epi,
    Alea,
}

impl UncertaintyMeasure {
    pub const ALL: [UncertaintyMeasure; 6] = [
        UncertaintyMeasure::Var,
        UncertaintyMeasure::Vr,
        UncertaintyMeasure::Pe,
        UncertaintyMeasure::Mi,
        UncertaintyMeasure::Epi,
        UncertaintyMeasure::Alea,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UncertaintyMeasure::Var => "var",
            UncertaintyMeasure::Vr => "vr",
            UncertaintyMeasure::Pe => "pe",
            UncertaintyMeasure::Mi => "mi",
            UncertaintyMeasure::Epi => "epi",
            UncertaintyMeasure::Alea => "alea",
        }
    }
}

impl fmt::Display for UncertaintyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UncertaintyMeasure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown uncertainty measure {s:?}"))
    }
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Index of the half-open bin `[k/n, (k+1)/n)` holding `p`; the last bin is
/// closed at 1. Edges are the doubles `k as f64 / n`.
pub(crate) fn bin_index(p: f64, bins: usize) -> usize {
    let n = bins as f64;
    let mut k = ((p * n).floor().max(0.0) as usize).min(bins - 1);
    if k + 1 < bins && p >= (k + 1) as f64 / n {
        k += 1;
    }
    if k > 0 && p < k as f64 / n {
        k -= 1;
    }
    k
}

/// Arithmetic mean that returns the common value itself when all values are
/// equal, so constant samples have exactly zero spread.
fn exact_mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    let mut first = None;
    let mut constant = true;
    let mut sum = 0.0;
    for v in values {
        constant &= *first.get_or_insert(v) == v;
        sum += v;
    }
    match first {
        Some(f) if constant => f,
        _ => sum / n,
    }
}

pub fn mean_probability(s: &PredictiveSamples) -> [f64; 2] {
    [exact_mean(s.column(0)), exact_mean(s.column(1))]
}

/// Population variance per class, averaged over both classes.
pub fn mc_variance(s: &PredictiveSamples) -> f64 {
    let mean = mean_probability(s);
    let t = s.run_count() as f64;
    let per_class = |c: usize| s.column(c).map(|p| (p - mean[c]).powi(2)).sum::<f64>() / t;
    (per_class(0) + per_class(1)) / 2.0
}

/// `1 - n_m / T` where `n_m` counts runs voting for the modal class.
pub fn variation_ratio(s: &PredictiveSamples, threshold: f64) -> f64 {
    let t = s.run_count();
    let stroke_votes = s.stroke_probs().filter(|&p| p > threshold).count();
    let modal = stroke_votes.max(t - stroke_votes);
    (t - modal) as f64 / t as f64
}

pub fn predictive_entropy(mean_prob: [f64; 2]) -> f64 {
    -(xlnx(mean_prob[0]) + xlnx(mean_prob[1]))
}

pub fn mutual_information(s: &PredictiveSamples) -> f64 {
    let pe = predictive_entropy(mean_probability(s));
    let mean_neg_entropy = exact_mean(s.runs().iter().map(|r| xlnx(r[0]) + xlnx(r[1])));
    let mi = pe + mean_neg_entropy;
    if (-MI_CLAMP..0.0).contains(&mi) {
        0.0
    } else {
        mi
    }
}

/// Epistemic uncertainty; identical to [`mc_variance`].
pub fn epistemic(s: &PredictiveSamples) -> f64 {
    mc_variance(s)
}

/// Mean Bernoulli variance of the per-run stroke probability.
pub fn aleatoric(s: &PredictiveSamples) -> f64 {
    exact_mean(s.stroke_probs().map(|p| p * (1.0 - p)))
}

/// Normalized 100-bin histograms, one per class.
pub fn histogram_counts(s: &PredictiveSamples) -> [Vec<f64>; 2] {
    let w = 1.0 / s.run_count() as f64;
    let mut hist = [vec![0.0; HIST_BINS], vec![0.0; HIST_BINS]];
    for r in s.runs() {
        for c in 0..2 {
            hist[c][bin_index(r[c], HIST_BINS)] += w;
        }
    }
    hist
}

pub fn summarize(s: &PredictiveSamples) -> UncertaintySummary {
    let mean_prob = mean_probability(s);
    let var = mc_variance(s);
    UncertaintySummary {
        mean_prob,
        var,
        vr: variation_ratio(s, DEFAULT_THRESHOLD),
        pe: predictive_entropy(mean_prob),
        mi: mutual_information(s),
        epi: var,
        alea: aleatoric(s),
        hist: histogram_counts(s),
        predicted_class: if mean_prob[1] > DEFAULT_THRESHOLD {
            ImageLabel::Stroke
        } else {
            ImageLabel::NoStroke
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(p: &[f64]) -> PredictiveSamples {
        PredictiveSamples::from_stroke_probs(p).unwrap()
    }

    #[test]
    fn mean_of_constant_and_mixed_runs() {
        let s = PredictiveSamples::new(vec![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(mean_probability(&s), [1.0, 0.0]);
        let s = PredictiveSamples::new(vec![[0.8, 0.2], [0.6, 0.4]]).unwrap();
        let m = mean_probability(&s);
        assert!((m[0] - 0.7).abs() < 1e-15 && (m[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn variance_cases() {
        assert_eq!(mc_variance(&samples(&[0.3; 7])), 0.0);
        assert_eq!(mc_variance(&samples(&[0.0, 1.0])), 0.25);
        let s = samples(&[0.1, 0.4, 0.9]);
        assert_eq!(epistemic(&s), mc_variance(&s));
    }

    #[test]
    fn variation_ratio_cases() {
        assert_eq!(variation_ratio(&samples(&[0.9; 10]), 0.5), 0.0);
        let mut p = vec![0.8; 7];
        p.extend([0.2; 3]);
        assert!((variation_ratio(&samples(&p), 0.5) - 0.3).abs() < 1e-15);
        assert_eq!(variation_ratio(&samples(&[0.7, 0.9, 0.1, 0.2]), 0.5), 0.5);
        // exactly at the threshold counts as no-stroke
        assert_eq!(variation_ratio(&samples(&[0.5, 0.5, 0.5]), 0.5), 0.0);
    }

    #[test]
    fn entropy_cases() {
        assert!((predictive_entropy([0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(predictive_entropy([1.0, 0.0]), 0.0);
        // -(0.9 ln 0.9 + 0.1 ln 0.1) = 0.325082973391448...
        assert!((predictive_entropy([0.9, 0.1]) - 0.325_082_973_391_448_3).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_cases() {
        assert_eq!(mutual_information(&samples(&[0.37; 5])), 0.0);
        let s = samples(&[0.0, 1.0]);
        assert!((mutual_information(&s) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn aleatoric_cases() {
        assert_eq!(aleatoric(&samples(&[0.5; 4])), 0.25);
        assert_eq!(aleatoric(&samples(&[0.0, 1.0, 1.0])), 0.0);
    }

    #[test]
    fn histogram_bin_rules() {
        let h = histogram_counts(&samples(&[0.5; 8]));
        assert_eq!(h[1][50], 1.0);
        assert_eq!(h[1].iter().sum::<f64>(), 1.0);
        let h = histogram_counts(&samples(&[1.0]));
        assert_eq!(h[1][99], 1.0);
        assert_eq!(h[0][0], 1.0);
        // decimal edges land in the upper bin
        for k in 0..100 {
            let p = k as f64 / 100.0;
            assert_eq!(bin_index(p, 100), k, "p = {p}");
        }
        assert_eq!(bin_index(0.29, 100), 29);
        assert_eq!(bin_index(0.999_999, 100), 99);
    }

    #[test]
    fn summary_prediction_threshold() {
        let s = summarize(&PredictiveSamples::new(vec![[0.6, 0.4]; 5]).unwrap());
        assert_eq!(s.predicted_class, ImageLabel::NoStroke);
        assert_eq!((s.var, s.vr), (0.0, 0.0));
        let s = summarize(&PredictiveSamples::new(vec![[0.4, 0.6]; 5]).unwrap());
        assert_eq!(s.predicted_class, ImageLabel::Stroke);
        let s = summarize(&samples(&[0.5, 0.5]));
        assert_eq!(s.predicted_class, ImageLabel::NoStroke);
    }

    #[test]
    fn measure_names_round_trip() {
        for m in UncertaintyMeasure::ALL {
            assert_eq!(m.as_str().parse::<UncertaintyMeasure>().unwrap(), m);
        }
    }
}
