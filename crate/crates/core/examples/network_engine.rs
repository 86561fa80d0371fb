//! Use the network engine directly: declare a small graph, train it with
//! Adam on the XOR problem, then read Monte-Carlo dropout spread.
//!
//! `cargo run --example network_engine`

use mcd_aggregate::nnkernel::{
    backward, cross_entropy_loss, forward, AdamConfig, AdamState, InputShape, LayerSpec, Mode, NetworkGraph, Tensor,
};
use mcd_aggregate::seeds;

fn dense(name: &str, inputs: usize, units: usize) -> LayerSpec {
    LayerSpec::Dense {
        name: name.into(),
        inputs,
        units,
    }
}

pub fn main() -> mcd_aggregate::Result<()> {
    let net = NetworkGraph::new(
        InputShape::Fixed { rows: 1, cols: 2 },
        None,
        vec![
            dense("hidden", 2, 16),
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.1 },
            dense("out", 16, 2),
            LayerSpec::Softmax,
        ],
    )?;
    let data: Vec<(Tensor, usize)> = [([0.0, 0.0], 0), ([0.0, 1.0], 1), ([1.0, 0.0], 1), ([1.0, 1.0], 0)]
        .into_iter()
        .map(|(x, y)| (Tensor::row_vector(x.to_vec()), y))
        .collect();

    let mut rng = seeds::rng(1);
    let mut params = net.init_params(&mut rng);
    println!("{} parameters", params.scalar_count());
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 0.02,
            ..AdamConfig::default()
        },
        &params,
    );
    for epoch in 1..=600 {
        params.zero_grad();
        let mut loss = 0.0;
        for (x, y) in &data {
            // forward reads the current values; gradients accumulate in `params`
            let (p, cache) = forward(&net, &params.clone(), x, Mode::Train, &mut rng)?;
            loss += cross_entropy_loss(p, *y) / data.len() as f64;
            backward(&net, &mut params, &cache, *y, 1.0 / data.len() as f64)?;
        }
        adam.step(&mut params)?;
        if epoch % 150 == 0 {
            println!("epoch {epoch:>3}: training loss {loss:.4}");
        }
    }

    for (x, y) in &data {
        let p = net.predict(&params, x)?;
        let mc: Vec<f64> = (0..200)
            .map(|_| forward(&net, &params, x, Mode::McInference, &mut rng).map(|(p, _)| p[1]))
            .collect::<mcd_aggregate::Result<_>>()?;
        let mean = mc.iter().sum::<f64>() / mc.len() as f64;
        let sd = (mc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mc.len() as f64).sqrt();
        println!(
            "{:?} -> p(1) {:.3} (label {y}); MC dropout mean {mean:.3} sd {sd:.3}",
            x.data(),
            p[1]
        );
        assert_eq!(usize::from(p[1] > 0.5), *y);
    }
    Ok(())
}
