use super::PatientPrediction;
use crate::measures::summarize;
use crate::nnkernel::{forward, Mode, NetworkGraph, ParameterStore, Tensor};
use crate::predstore::{PatientLabel, PredictiveSamples};
use crate::{seeds, Error, Result};

pub const DEFAULT_MC_RUNS: usize = 500;

/// Runs `runs` dropout-perturbed forward passes and summarizes them exactly
/// like an image-level predictive sample.
pub fn predict_patient(
    net: &NetworkGraph,
    params: &ParameterStore,
    features: &Tensor,
    runs: usize,
    seed: u64,
) -> Result<PatientPrediction> {
    if runs == 0 {
        return Err(Error::Config("at least one Monte-Carlo run is required".into()));
    }
    let mut rng = seeds::rng(seed);
    let rows = (0..runs)
        .map(|_| forward(net, params, features, Mode::McInference, &mut rng).map(|(p, _)| p))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&PredictiveSamples::new(rows)?);
    Ok(PatientPrediction {
        mean_prob: summary.mean_prob,
        predicted_label: if summary.p_stroke() > 0.5 {
            PatientLabel::Stroke
        } else {
            PatientLabel::Tia
        },
        summary: Some(summary),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{build_model_with, FeatureVariant, InputKind, ModelConfig};

    #[test]
    fn no_dropout_means_no_spread() {
        let cfg = ModelConfig {
            dropout: Some(0.0),
            ..ModelConfig::default()
        };
        let net = build_model_with(FeatureVariant::Fcnn(InputKind::P), &cfg).unwrap();
        let params = net.init_params(&mut seeds::rng(5));
        let x = Tensor::row_vector(vec![0.9, 0.8, 0.4, 0.2, 0.1]);
        let p = predict_patient(&net, &params, &x, 50, 1).unwrap();
        let s = p.summary.unwrap();
        assert_eq!((s.var, s.vr, s.mi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn repeatable_and_decomposes() {
        let net = build_model_with(FeatureVariant::Cnn1d(InputKind::P), &ModelConfig::default()).unwrap();
        let params = net.init_params(&mut seeds::rng(9));
        let x = Tensor::new(25, 1, (0..25).map(|i| i as f64 / 25.0).collect()).unwrap();
        let a = predict_patient(&net, &params, &x, 200, 4).unwrap();
        let b = predict_patient(&net, &params, &x, 200, 4).unwrap();
        assert_eq!(a, b);
        let s = a.summary.unwrap();
        assert!((s.epi + s.alea - s.p_stroke() * (1.0 - s.p_stroke())).abs() < 1e-12);
        assert!(s.var > 0.0);
        assert!(predict_patient(&net, &params, &x, 0, 4).is_err());
    }
}
