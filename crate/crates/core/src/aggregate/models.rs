use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_features, maximum_method, predict_patient, train_aggregator, EpochLog, FeatureVariant, InputKind,
    PatientPrediction, TrainConfig, TOP_K,
};
use crate::measures::UncertaintySummary;
use crate::nnkernel::{InputShape, LayerSpec, NetworkGraph, ParameterStore, Pathways, Tensor};
use crate::predstore::{PatientLabel, PatientRecord};
use crate::{fsutil, Error, Result};

/// Layer widths of the aggregation networks. The defaults are the published
/// sizes; smaller values are handy for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_units: usize,
    pub head_units: usize,
    pub filters: usize,
    pub kernel: usize,
    /// Replaces the variant's default dropout rate when set.
    pub dropout: Option<f64>,
    pub shared_pathways: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_units: 8,
            head_units: 8,
            filters: 16,
            kernel: 3,
            dropout: None,
            shared_pathways: true,
        }
    }
}

pub fn default_dropout(variant: FeatureVariant) -> f64 {
    match variant {
        FeatureVariant::Max => 0.0,
        FeatureVariant::Fcnn(InputKind::P) => 0.3,
        FeatureVariant::Fcnn(InputKind::Hist) | FeatureVariant::Cnn1d(InputKind::Hist) => 0.5,
        FeatureVariant::Fcnn(_) | FeatureVariant::Cnn1d(_) => 0.4,
    }
}

fn dense(name: &str, inputs: usize, units: usize) -> LayerSpec {
    LayerSpec::Dense {
        name: name.to_string(),
        inputs,
        units,
    }
}

/// Three blocks of dense + ReLU + dropout.
fn hidden_stack(inputs: usize, units: usize, rate: f64) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut width = inputs;
    for i in 1..=3 {
        layers.push(dense(&format!("hidden{i}"), width, units));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Dropout { rate });
        width = units;
    }
    layers
}

pub fn build_model(variant: FeatureVariant) -> Result<NetworkGraph> {
    build_model_with(variant, &ModelConfig::default())
}

pub fn build_model_with(variant: FeatureVariant, cfg: &ModelConfig) -> Result<NetworkGraph> {
    let rate = cfg.dropout.unwrap_or_else(|| default_dropout(variant));
    match variant {
        FeatureVariant::Max => Err(Error::Config("the maximum rule has no network".into())),
        FeatureVariant::Fcnn(InputKind::P) => {
            let mut layers = hidden_stack(TOP_K, cfg.hidden_units, rate);
            layers.push(dense("out", cfg.hidden_units, 2));
            layers.push(LayerSpec::Softmax);
            NetworkGraph::new(InputShape::Fixed { rows: 1, cols: TOP_K }, None, layers)
        }
        FeatureVariant::Fcnn(kind) => {
            let pathways = Pathways {
                count: TOP_K,
                shared: cfg.shared_pathways,
                layers: hidden_stack(kind.channels(), cfg.hidden_units, rate),
            };
            let layers = vec![
                dense("merge", TOP_K * cfg.hidden_units, cfg.head_units),
                LayerSpec::Dropout { rate },
                dense("out", cfg.head_units, 2),
                LayerSpec::Softmax,
            ];
            NetworkGraph::new(
                InputShape::Fixed {
                    rows: TOP_K,
                    cols: kind.channels(),
                },
                Some(pathways),
                layers,
            )
        }
        FeatureVariant::Cnn1d(kind) => {
            let layers = vec![
                LayerSpec::Conv1d {
                    name: "conv".into(),
                    channels: kind.channels(),
                    filters: cfg.filters,
                    kernel: cfg.kernel,
                },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate },
                LayerSpec::GlobalMaxPool,
                dense("out", cfg.filters, 2),
                LayerSpec::Softmax,
            ];
            NetworkGraph::new(
                InputShape::Sequence {
                    channels: kind.channels(),
                    min_len: cfg.kernel,
                },
                None,
                layers,
            )
        }
    }
}

pub const MODEL_FORMAT: &str = "mcd-aggregate/model-v1";

/// Serialized aggregation model: architecture, parameters, optimizer
/// settings and training seed. The Maximum rule has neither network nor
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationModel {
    pub format: String,
    pub variant: FeatureVariant,
    pub model_config: ModelConfig,
    pub network: Option<NetworkGraph>,
    pub params: Option<ParameterStore>,
    pub train_config: TrainConfig,
    /// Epoch whose parameters were kept (0 = initial parameters).
    pub best_epoch: usize,
}

impl AggregationModel {
    pub fn maximum(train_config: TrainConfig) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            variant: FeatureVariant::Max,
            model_config: ModelConfig::default(),
            network: None,
            params: None,
            train_config,
            best_epoch: 0,
        }
    }

    /// Trains `variant` on prepared features; the Maximum rule needs no
    /// training and returns immediately with an empty log.
    pub fn fit(
        variant: FeatureVariant,
        model_config: &ModelConfig,
        train: &[(Tensor, PatientLabel)],
        valid: &[(Tensor, PatientLabel)],
        train_config: TrainConfig,
    ) -> Result<(Self, Vec<EpochLog>)> {
        if !variant.is_network() {
            return Ok((Self::maximum(train_config), Vec::new()));
        }
        let net = build_model_with(variant, model_config)?;
        let trained = train_aggregator(&net, train, valid, &train_config)?;
        let model = Self {
            format: MODEL_FORMAT.into(),
            variant,
            model_config: *model_config,
            network: Some(net),
            params: Some(trained.params),
            train_config,
            best_epoch: trained.best_epoch,
        };
        Ok((model, trained.log))
    }

    /// Patient prediction from the patient's per-image summaries (slice
    /// order). `seed` drives the dropout masks and is ignored by the Maximum
    /// rule.
    pub fn predict(
        &self,
        patient: &PatientRecord,
        summaries: &[UncertaintySummary],
        runs: usize,
        seed: u64,
    ) -> Result<PatientPrediction> {
        match (&self.network, &self.params) {
            (Some(net), Some(params)) => {
                let x = build_features(patient, summaries, self.variant)?;
                predict_patient(net, params, &x, runs, seed)
            }
            _ => maximum_method(patient, summaries),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        let model: Self = serde_json::from_str(&text)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::Config(format!("unsupported model format {:?}", model.format)));
        }
        if model.variant.is_network() != (model.network.is_some() && model.params.is_some()) {
            return Err(Error::Config("model file is missing its network or parameters".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn fcnn_p_parameter_count() {
        let net = build_model(FeatureVariant::Fcnn(InputKind::P)).unwrap();
        let params = net.init_params(&mut seeds::rng(0));
        // (5*8 + 8) + 2 * (8*8 + 8) + (8*2 + 2)
        assert_eq!(params.scalar_count(), 48 + 2 * 72 + 18);
    }

    #[test]
    fn parallel_and_cnn_parameter_counts() {
        let count = |v| build_model(v).unwrap().init_params(&mut seeds::rng(0)).scalar_count();
        // one shared pathway (d*8+8 + 2*72) + merge (40*8+8) + out (8*2+2)
        let pathway = |d: usize| d * 8 + 8 + 2 * 72;
        assert_eq!(
            count(FeatureVariant::Fcnn(InputKind::PVrPeMiVar)),
            pathway(5) + 328 + 18
        );
        assert_eq!(count(FeatureVariant::Fcnn(InputKind::PEpiAlea)), pathway(3) + 328 + 18);
        assert_eq!(count(FeatureVariant::Fcnn(InputKind::Hist)), pathway(100) + 328 + 18);
        // conv (16*3*d + 16) + out (16*2 + 2)
        assert_eq!(count(FeatureVariant::Cnn1d(InputKind::P)), 16 * 3 + 16 + 34);
        assert_eq!(count(FeatureVariant::Cnn1d(InputKind::Hist)), 16 * 300 + 16 + 34);
    }

    #[test]
    fn dropout_rates() {
        let rate = |v| {
            build_model(v)
                .unwrap()
                .layers()
                .iter()
                .chain(build_model(v).unwrap().pathways().map_or(&[][..], |p| &p.layers[..]))
                .find_map(|l| match l {
                    LayerSpec::Dropout { rate } => Some(*rate),
                    _ => None,
                })
                .unwrap()
        };
        assert_eq!(rate(FeatureVariant::Fcnn(InputKind::P)), 0.3);
        assert_eq!(rate(FeatureVariant::Fcnn(InputKind::PEpiAlea)), 0.4);
        assert_eq!(rate(FeatureVariant::Fcnn(InputKind::Hist)), 0.5);
        assert_eq!(rate(FeatureVariant::Cnn1d(InputKind::P)), 0.4);
        assert_eq!(rate(FeatureVariant::Cnn1d(InputKind::Hist)), 0.5);
    }

    #[test]
    fn cnn_accepts_any_length() {
        let net = build_model(FeatureVariant::Cnn1d(InputKind::P)).unwrap();
        let params = net.init_params(&mut seeds::rng(3));
        for n in [21, 46] {
            let x = crate::nnkernel::Tensor::new(n, 1, vec![0.4; n]).unwrap();
            let p = net.predict(&params, &x).unwrap();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn max_has_no_network() {
        assert!(build_model(FeatureVariant::Max).is_err());
    }
}
