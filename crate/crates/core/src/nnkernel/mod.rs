//! A minimal 64-bit neural network engine covering exactly the layer
//! vocabulary the aggregation models need: dense, valid 1D convolution, ReLU,
//! inverted dropout, global max pooling, softmax, and weight-shared (or
//! independent) parallel pathways joined by concatenation.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{backward, forward, ForwardCache, InputShape, LayerSpec, Mode, NetworkGraph, Pathways};
pub use params::{Param, ParameterStore};
pub use tensor::Tensor;

/// Probabilities are clamped to this floor before taking logarithms.
pub const LOSS_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of one prediction against a class index.
pub fn cross_entropy_loss(probs: [f64; 2], label: usize) -> f64 {
    let p = probs[label.min(1)].clamp(LOSS_CLAMP, 1.0);
    -p.ln()
}

/// Mean binary cross-entropy over a batch.
pub fn batch_loss(batch: &[([f64; 2], usize)]) -> f64 {
    batch.iter().map(|&(p, y)| cross_entropy_loss(p, y)).sum::<f64>() / batch.len() as f64
}
