//! Summarize Monte-Carlo dropout samples of single images: mean probability,
//! the six uncertainty measures and the per-class histograms.
//!
//! `cargo run --example uncertainty_measures`

use mcd_aggregate::measures::{summarize, UncertaintyMeasure};
use mcd_aggregate::predstore::PredictiveSamples;

pub fn main() -> mcd_aggregate::Result<()> {
    let images = [
        ("confident stroke", vec![0.97, 0.99, 0.95, 0.98, 0.96]),
        ("confident no-stroke", vec![0.02, 0.01, 0.03, 0.02, 0.04]),
        ("split vote", vec![0.9, 0.1, 0.8, 0.2, 0.7]),
        ("consistently unsure", vec![0.5, 0.48, 0.52, 0.49, 0.51]),
    ];
    println!(
        "{:<22} {:>6} {}",
        "image",
        "p",
        UncertaintyMeasure::ALL.map(|m| format!("{:>7}", m.as_str())).join("")
    );
    for (name, runs) in images {
        let s = summarize(&PredictiveSamples::from_stroke_probs(&runs)?);
        let cols: String = UncertaintyMeasure::ALL
            .iter()
            .map(|&m| format!("{:>7.4}", s.measure(m)))
            .collect();
        println!("{name:<22} {:>6.3} {cols}", s.p_stroke());
        // epistemic + aleatoric recovers the total Bernoulli variance
        let total = s.p_stroke() * (1.0 - s.p_stroke());
        assert!((s.epi + s.alea - total).abs() < 1e-12);
    }

    // A split vote is the textbook case of model (epistemic) uncertainty;
    // a consistent 0.5 is pure data (aleatoric) uncertainty.
    let split = summarize(&PredictiveSamples::from_stroke_probs(&[0.9, 0.1, 0.8, 0.2, 0.7])?);
    let unsure = summarize(&PredictiveSamples::from_stroke_probs(&[0.5, 0.48, 0.52, 0.49, 0.51])?);
    println!(
        "\nsplit vote: MI {:.3} vs consistently unsure: MI {:.5}",
        split.mi, unsure.mi
    );

    let occupied: Vec<String> = split.hist[1]
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0.0)
        .map(|(bin, f)| format!("[{:.2},{:.2}):{f}", bin as f64 / 100.0, (bin + 1) as f64 / 100.0))
        .collect();
    println!("stroke-class histogram of the split vote: {}", occupied.join(" "));
    Ok(())
}
