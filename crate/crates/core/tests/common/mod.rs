//! Independent brute-force oracles shared by the integration tests. They
//! follow the textbook definitions directly and avoid the library's code
//! paths (no shared helpers, different summation orders and formulas).
#![allow(dead_code)]

use mcd_aggregate::nnkernel::{backward, cross_entropy_loss, forward, Mode, NetworkGraph, ParameterStore, Tensor};
use mcd_aggregate::predstore::PredictiveSamples;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stroke probabilities with a mix of smooth values, exact extremes, the
/// decision threshold and histogram bin edges.
pub fn random_stroke_probs<R: Rng>(t: usize, rng: &mut R) -> Vec<f64> {
    let style = rng.random_range(0..4);
    let centre: f64 = rng.random();
    (0..t)
        .map(|_| match style {
            0 => rng.random::<f64>(),
            1 => (centre + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
            2 => match rng.random_range(0..5) {
                0 => 0.0,
                1 => 1.0,
                2 => 0.5,
                3 => rng.random_range(0..=100) as f64 / 100.0,
                _ => rng.random::<f64>(),
            },
            _ => centre,
        })
        .collect()
}

pub fn random_samples<R: Rng>(t: usize, rng: &mut R) -> PredictiveSamples {
    PredictiveSamples::from_stroke_probs(&random_stroke_probs(t, rng)).unwrap()
}

fn column(s: &PredictiveSamples, c: usize) -> Vec<f64> {
    s.runs().iter().map(|r| r[c]).collect()
}

/// Mean computed back to front.
pub fn oracle_mean(xs: &[f64]) -> f64 {
    xs.iter().rev().sum::<f64>() / xs.len() as f64
}

/// Population variance via the pairwise identity
/// `Var = 1/(2T^2) * sum_ij (x_i - x_j)^2`.
pub fn oracle_pairwise_var(xs: &[f64]) -> f64 {
    let t = xs.len() as f64;
    let mut acc = 0.0;
    for a in xs {
        for b in xs {
            acc += (a - b) * (a - b);
        }
    }
    acc / (2.0 * t * t)
}

pub fn oracle_var(s: &PredictiveSamples) -> f64 {
    0.5 * (oracle_pairwise_var(&column(s, 0)) + oracle_pairwise_var(&column(s, 1)))
}

/// Tally of per-run votes; stroke only above 0.5, mode ties go to no-stroke.
pub fn oracle_vr(s: &PredictiveSamples) -> f64 {
    let mut votes = [0u32; 2];
    for r in s.runs() {
        votes[if r[1] > 0.5 { 1 } else { 0 }] += 1;
    }
    let mode = if votes[1] > votes[0] { 1 } else { 0 };
    let t = votes[0] + votes[1];
    f64::from(t - votes[mode]) / f64::from(t)
}

fn plogp(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

pub fn oracle_pe(s: &PredictiveSamples) -> f64 {
    let m0 = oracle_mean(&column(s, 0));
    let m1 = oracle_mean(&column(s, 1));
    -(plogp(m0) + plogp(m1))
}

pub fn oracle_mi(s: &PredictiveSamples) -> f64 {
    let expected_entropy: Vec<f64> = s.runs().iter().map(|r| -(plogp(r[0]) + plogp(r[1]))).collect();
    oracle_pe(s) - oracle_mean(&expected_entropy)
}

pub fn oracle_alea(s: &PredictiveSamples) -> f64 {
    let v: Vec<f64> = s.runs().iter().map(|r| r[1] - r[1] * r[1]).collect();
    oracle_mean(&v)
}

/// Bin `j` holds `[j/100, (j+1)/100)`; the last bin also holds 1.
pub fn oracle_hist(xs: &[f64]) -> Vec<f64> {
    let t = xs.len() as f64;
    (0..100)
        .map(|j| {
            let lo = j as f64 / 100.0;
            let hi = (j + 1) as f64 / 100.0;
            xs.iter()
                .filter(|&&p| (p >= lo && p < hi) || (j == 99 && p == 1.0))
                .count() as f64
                / t
        })
        .collect()
}

pub fn oracle_hist_classes(s: &PredictiveSamples) -> [Vec<f64>; 2] {
    [oracle_hist(&column(s, 0)), oracle_hist(&column(s, 1))]
}

/// Sanders score by scanning all items for every interval.
pub fn oracle_sanders(probs: &[f64], labels: &[bool]) -> f64 {
    let n = probs.len() as f64;
    let mut total = 0.0;
    for i in 0..20 {
        let lo = i as f64 / 20.0;
        let hi = (i + 1) as f64 / 20.0;
        let members: Vec<usize> = (0..probs.len())
            .filter(|&k| (probs[k] >= lo && probs[k] < hi) || (i == 19 && probs[k] == 1.0))
            .collect();
        if members.is_empty() {
            continue;
        }
        let ybar = members.iter().filter(|&&k| labels[k]).count() as f64 / members.len() as f64;
        let rep = (i as f64 + 0.5) / 20.0;
        total += members.len() as f64 * (ybar - rep) * (ybar - rep);
    }
    total / n
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn oracle_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs as f64
}

/// Loss of one sample with dropout masks drawn from `mask_seed`.
pub fn loss_with_masks(net: &NetworkGraph, params: &ParameterStore, x: &Tensor, label: usize, mask_seed: u64) -> f64 {
    let (p, _) = forward(net, params, x, Mode::Train, &mut rng(mask_seed)).unwrap();
    cross_entropy_loss(p, label)
}

/// One parameter scalar compared against its central difference.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// `|a - n| / max(|a| + |n|, 1e-8)`; the floor keeps exactly-zero
    /// gradients from dividing by zero.
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + self.numeric.abs()).max(1e-8)
    }
}

/// Analytic gradient of the loss (same dropout masks) against central
/// differences with step `h` for every scalar parameter.
pub fn gradient_check(
    net: &NetworkGraph,
    params: &ParameterStore,
    x: &Tensor,
    label: usize,
    mask_seed: u64,
    h: f64,
) -> Vec<GradCheck> {
    let mut analytic = params.clone();
    analytic.zero_grad();
    let (_, cache) = forward(net, &analytic.clone(), x, Mode::Train, &mut rng(mask_seed)).unwrap();
    backward(net, &mut analytic, &cache, label, 1.0).unwrap();

    let mut out = Vec::new();
    let mut probe = params.clone();
    for name in params.names().map(str::to_string).collect::<Vec<_>>() {
        let n = params.get(&name).unwrap().len();
        for i in 0..n {
            let orig = probe.get(&name).unwrap().value[i];
            probe.get_mut(&name).unwrap().value[i] = orig + h;
            let up = loss_with_masks(net, &probe, x, label, mask_seed);
            probe.get_mut(&name).unwrap().value[i] = orig - h;
            let down = loss_with_masks(net, &probe, x, label, mask_seed);
            probe.get_mut(&name).unwrap().value[i] = orig;
            out.push(GradCheck {
                name: name.clone(),
                index: i,
                analytic: analytic.get(&name).unwrap().grad[i],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    out
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}
