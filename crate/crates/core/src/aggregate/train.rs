use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nnkernel::{
    backward, cross_entropy_loss, forward, AdamConfig, AdamState, Mode, NetworkGraph, ParameterStore, Tensor,
};
use crate::predstore::PatientLabel;
use crate::{seeds, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 2,
            adam: AdamConfig::default(),
            seed: seeds::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches (dropout active).
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Deterministic-mode loss on the validation set.
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: ParameterStore,
    pub log: Vec<EpochLog>,
    /// Epoch with the lowest validation loss; 0 means the initial parameters.
    pub best_epoch: usize,
}

fn evaluate(net: &NetworkGraph, params: &ParameterStore, data: &[(Tensor, PatientLabel)]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in data {
        let p = net.predict(params, x)?;
        loss += cross_entropy_loss(p, y.class());
        correct += usize::from(PatientLabel::from_class(usize::from(p[1] > 0.5)) == *y);
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam on the mean cross-entropy, reshuffling the training set
/// every epoch. Batches are processed sample by sample with gradient
/// accumulation, so sequences of different lengths can share a batch. The
/// returned parameters are those of the epoch with the lowest validation
/// loss (the last epoch when there is no validation data).
pub fn train_aggregator(
    net: &NetworkGraph,
    train: &[(Tensor, PatientLabel)],
    valid: &[(Tensor, PatientLabel)],
    config: &TrainConfig,
) -> Result<TrainingOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    for (x, _) in train.iter().chain(valid) {
        net.check_input(x)?;
    }
    let mut rng = seeds::rng(config.seed);
    let mut params = net.init_params(&mut rng);
    let mut adam = AdamState::new(config.adam, &params);
    let mut best = (params.clone(), 0usize, f64::INFINITY);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = &train[i];
                let (p, cache) = forward(net, &params, x, Mode::Train, &mut rng)?;
                loss_sum += cross_entropy_loss(p, y.class());
                correct += usize::from((p[1] > 0.5) == (*y == PatientLabel::Stroke));
                backward(net, &mut params, &cache, y.class(), scale)?;
            }
            adam.step(&mut params)?;
        }
        let n = train.len() as f64;
        let (valid_loss, valid_accuracy) = if valid.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(net, &params, valid)?;
            (Some(l), Some(a))
        };
        match valid_loss {
            Some(l) if l < best.2 => best = (params.clone(), epoch, l),
            None => best = (params.clone(), epoch, f64::INFINITY),
            _ => {}
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            valid_loss,
            valid_accuracy,
        });
    }
    let (params, best_epoch, _) = best;
    Ok(TrainingOutcome {
        params,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{build_model, FeatureVariant, InputKind};

    fn separable(n: usize, seed: u64) -> Vec<(Tensor, PatientLabel)> {
        use rand::Rng;
        let mut rng = seeds::rng(seed);
        (0..n)
            .map(|i| {
                let stroke = i % 2 == 0;
                let x: Vec<f64> = (0..5)
                    .map(|_| {
                        let jitter: f64 = rng.random_range(0.0..0.08);
                        if stroke {
                            0.97 - jitter
                        } else {
                            0.03 + jitter
                        }
                    })
                    .collect();
                (Tensor::row_vector(x), PatientLabel::from_class(usize::from(stroke)))
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let net = build_model(FeatureVariant::Fcnn(InputKind::P)).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_aggregator(&net, &separable(6, 1), &separable(4, 2), &cfg).unwrap();
        assert_eq!(out.params, net.init_params(&mut seeds::rng(cfg.seed)));
        assert!(out.log.is_empty());
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn empty_training_set_rejected() {
        let net = build_model(FeatureVariant::Fcnn(InputKind::P)).unwrap();
        assert!(train_aggregator(&net, &[], &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn learns_separable_features_deterministically() {
        let net = build_model(FeatureVariant::Fcnn(InputKind::P)).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            seed: 11,
            ..TrainConfig::default()
        };
        let (train, valid) = (separable(40, 3), separable(20, 4));
        let a = train_aggregator(&net, &train, &valid, &cfg).unwrap();
        let b = train_aggregator(&net, &train, &valid, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        let best = &a.log[a.best_epoch - 1];
        assert!(best.valid_accuracy.unwrap() >= 0.95, "{best:?}");
        let min = a.log.iter().filter_map(|e| e.valid_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(best.valid_loss, Some(min));
    }
}
