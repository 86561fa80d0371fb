use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::params::{Param, ParameterStore};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks cached for backpropagation.
    Train,
    /// Dropout active at inference time (MC dropout).
    McInference,
    /// Dropout disabled; a pure function of parameters and input.
    Deterministic,
}

impl Mode {
    fn dropout_active(self) -> bool {
        !matches!(self, Mode::Deterministic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected layer over the flattened input.
    Dense {
        name: String,
        inputs: usize,
        units: usize,
    },
    /// Valid (unpadded) convolution along the sequence axis.
    Conv1d {
        name: String,
        channels: usize,
        filters: usize,
        kernel: usize,
    },
    Relu,
    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
    Dropout {
        rate: f64,
    },
    GlobalMaxPool,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    Fixed {
        rows: usize,
        cols: usize,
    },
    /// Variable-length sequence `length x channels`.
    Sequence {
        channels: usize,
        min_len: usize,
    },
}

/// `count` copies of the same layer stack, each fed one input row, joined by
/// concatenating their flattened outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pathways {
    pub count: usize,
    pub shared: bool,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawGraph {
    input: InputShape,
    pathways: Option<Pathways>,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct NetworkGraph {
    input: InputShape,
    pathways: Option<Pathways>,
    layers: Vec<LayerSpec>,
}

impl TryFrom<RawGraph> for NetworkGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        NetworkGraph::new(raw.input, raw.pathways, raw.layers)
    }
}

impl From<NetworkGraph> for RawGraph {
    fn from(g: NetworkGraph) -> Self {
        RawGraph {
            input: g.input,
            pathways: g.pathways,
            layers: g.layers,
        }
    }
}

/// Rows are `None` for variable-length sequences.
type Shape = (Option<usize>, usize);

fn infer_stack(layers: &[LayerSpec], mut shape: Shape, min_len: usize, allow_softmax: bool) -> Result<Shape> {
    for (i, layer) in layers.iter().enumerate() {
        shape = match layer {
            LayerSpec::Dense { name, inputs, units } => {
                let rows = shape
                    .0
                    .ok_or_else(|| Error::Shape(format!("dense {name} on a variable-length input")))?;
                if rows * shape.1 != *inputs {
                    return Err(Error::Shape(format!(
                        "dense {name} expects {inputs} inputs, receives {}",
                        rows * shape.1
                    )));
                }
                if *units == 0 {
                    return Err(Error::Shape(format!("dense {name} has no units")));
                }
                (Some(1), *units)
            }
            LayerSpec::Conv1d {
                name,
                channels,
                filters,
                kernel,
            } => {
                if *kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::Shape(format!(
                        "conv1d {name}: kernel length must be odd and >= 1"
                    )));
                }
                if shape.1 != *channels || *filters == 0 {
                    return Err(Error::Shape(format!(
                        "conv1d {name} expects {channels} channels, receives {}",
                        shape.1
                    )));
                }
                let rows = match shape.0 {
                    Some(r) if r < *kernel => {
                        return Err(Error::Shape(format!("conv1d {name}: length {r} < kernel {kernel}")))
                    }
                    Some(r) => Some(r - kernel + 1),
                    None if min_len < *kernel => {
                        return Err(Error::Shape(format!(
                            "conv1d {name}: minimum length {min_len} < kernel {kernel}"
                        )))
                    }
                    None => None,
                };
                (rows, *filters)
            }
            LayerSpec::Relu => shape,
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::Shape(format!("dropout rate {rate} outside [0, 1)")));
                }
                shape
            }
            LayerSpec::GlobalMaxPool => (Some(1), shape.1),
            LayerSpec::Softmax => {
                if !allow_softmax || i + 1 != layers.len() {
                    return Err(Error::Shape("softmax must be the final layer".into()));
                }
                if shape != (Some(1), 2) {
                    return Err(Error::Shape("softmax output must have width 2".into()));
                }
                shape
            }
        };
    }
    Ok(shape)
}

impl NetworkGraph {
    pub fn new(input: InputShape, pathways: Option<Pathways>, layers: Vec<LayerSpec>) -> Result<Self> {
        let (start, min_len) = match input {
            InputShape::Fixed { rows, cols } => ((Some(rows), cols), rows),
            InputShape::Sequence { channels, min_len } => ((None, channels), min_len),
        };
        let head_input = match &pathways {
            Some(pw) => {
                let InputShape::Fixed { rows, cols } = input else {
                    return Err(Error::Shape("parallel pathways need a fixed-size input".into()));
                };
                if rows != pw.count || pw.count == 0 {
                    return Err(Error::Shape(format!("{} pathways but {rows} input rows", pw.count)));
                }
                let (r, c) = infer_stack(&pw.layers, (Some(1), cols), 1, false)?;
                (Some(1), pw.count * r.unwrap_or(1) * c)
            }
            None => start,
        };
        let out = infer_stack(&layers, head_input, min_len, true)?;
        if !matches!(layers.last(), Some(LayerSpec::Softmax)) || out != (Some(1), 2) {
            return Err(Error::Shape("network must end in a width-2 softmax".into()));
        }
        Ok(Self {
            input,
            pathways,
            layers,
        })
    }

    pub fn input(&self) -> InputShape {
        self.input
    }

    pub fn pathways(&self) -> Option<&Pathways> {
        self.pathways.as_ref()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    fn pathway_prefix(&self, index: usize) -> Option<usize> {
        match &self.pathways {
            Some(pw) if !pw.shared => Some(index),
            _ => None,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterStore {
        let mut store = ParameterStore::new();
        let add = |layers: &[LayerSpec], pathway: Option<usize>, store: &mut ParameterStore, rng: &mut R| {
            for layer in layers {
                match layer {
                    LayerSpec::Dense { name, inputs, units } => {
                        store.insert_if_absent(&weight_name(name, pathway), || {
                            Param::glorot(vec![*units, *inputs], *inputs, *units, rng)
                        });
                        store.insert_if_absent(&bias_name(name, pathway), || Param::zeros(vec![*units]));
                    }
                    LayerSpec::Conv1d {
                        name,
                        channels,
                        filters,
                        kernel,
                    } => {
                        store.insert_if_absent(&weight_name(name, pathway), || {
                            Param::glorot(
                                vec![*filters, *kernel, *channels],
                                channels * kernel,
                                filters * kernel,
                                rng,
                            )
                        });
                        store.insert_if_absent(&bias_name(name, pathway), || Param::zeros(vec![*filters]));
                    }
                    _ => {}
                }
            }
        };
        if let Some(pw) = &self.pathways {
            for i in 0..pw.count {
                add(&pw.layers, self.pathway_prefix(i), &mut store, rng);
            }
        }
        add(&self.layers, None, &mut store, rng);
        store
    }

    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        match self.input {
            InputShape::Fixed { rows, cols } if input.rows() != rows || input.cols() != cols => Err(Error::Shape(
                format!("expected {rows}x{cols} input, got {}x{}", input.rows(), input.cols()),
            )),
            InputShape::Sequence { channels, min_len } if input.cols() != channels || input.rows() < min_len => {
                Err(Error::Shape(format!(
                    "expected a sequence of >= {min_len} steps with {channels} channels, got {}x{}",
                    input.rows(),
                    input.cols()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Deterministic-mode class probabilities.
    pub fn predict(&self, params: &ParameterStore, input: &Tensor) -> Result<[f64; 2]> {
        // deterministic mode never draws from the generator
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        forward(self, params, input, Mode::Deterministic, &mut rng).map(|(p, _)| p)
    }
}

fn weight_name(layer: &str, pathway: Option<usize>) -> String {
    match pathway {
        Some(i) => format!("{layer}#{i}.w"),
        None => format!("{layer}.w"),
    }
}

fn bias_name(layer: &str, pathway: Option<usize>) -> String {
    match pathway {
        Some(i) => format!("{layer}#{i}.b"),
        None => format!("{layer}.b"),
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense { input: Tensor },
    Conv { input: Tensor },
    Relu { input: Tensor },
    Dropout { scale: Vec<f64> },
    Pool { argmax: Vec<usize>, rows: usize },
    Softmax,
}

/// Activations recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pathways: Vec<Vec<LayerCache>>,
    pathway_width: usize,
    head: Vec<LayerCache>,
    probs: [f64; 2],
}

impl ForwardCache {
    pub fn probs(&self) -> [f64; 2] {
        self.probs
    }
}

fn softmax2(z: &[f64]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn layer_forward<R: Rng + ?Sized>(
    layer: &LayerSpec,
    pathway: Option<usize>,
    params: &ParameterStore,
    x: Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, LayerCache)> {
    Ok(match layer {
        LayerSpec::Dense { name, inputs, units } => {
            let w = &params.get(&weight_name(name, pathway))?.value;
            let b = &params.get(&bias_name(name, pathway))?.value;
            if x.len() != *inputs || w.len() != inputs * units || b.len() != *units {
                return Err(Error::Shape(format!("dense {name}: parameter or input size mismatch")));
            }
            let xs = x.data();
            let out = (0..*units)
                .map(|u| {
                    let row = &w[u * inputs..(u + 1) * inputs];
                    b[u] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            (Tensor::row_vector(out), LayerCache::Dense { input: x })
        }
        LayerSpec::Conv1d {
            name,
            channels,
            filters,
            kernel,
        } => {
            let w = &params.get(&weight_name(name, pathway))?.value;
            let b = &params.get(&bias_name(name, pathway))?.value;
            if x.cols() != *channels || x.rows() < *kernel || w.len() != filters * kernel * channels {
                return Err(Error::Shape(format!("conv1d {name}: parameter or input size mismatch")));
            }
            let steps = x.rows() - kernel + 1;
            let mut out = Tensor::zeros(steps, *filters);
            let span = kernel * channels;
            for t in 0..steps {
                // the kernel window is contiguous in row-major storage
                let window = &x.data()[t * channels..t * channels + span];
                for f in 0..*filters {
                    let wf = &w[f * span..(f + 1) * span];
                    out.data_mut()[t * filters + f] = b[f] + wf.iter().zip(window).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            (out, LayerCache::Conv { input: x })
        }
        LayerSpec::Relu => {
            let mut y = x.clone();
            y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            (y, LayerCache::Relu { input: x })
        }
        LayerSpec::Dropout { rate } => {
            if mode.dropout_active() && *rate > 0.0 {
                let keep = 1.0 / (1.0 - rate);
                let scale: Vec<f64> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                    .collect();
                let mut y = x;
                y.data_mut().iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
                (y, LayerCache::Dropout { scale })
            } else {
                (x, LayerCache::Dropout { scale: Vec::new() })
            }
        }
        LayerSpec::GlobalMaxPool => {
            let (rows, cols) = (x.rows(), x.cols());
            let mut argmax = vec![0usize; cols];
            let mut out = vec![f64::NEG_INFINITY; cols];
            for t in 0..rows {
                for c in 0..cols {
                    let v = x.get(t, c);
                    if v > out[c] {
                        out[c] = v;
                        argmax[c] = t;
                    }
                }
            }
            (Tensor::row_vector(out), LayerCache::Pool { argmax, rows })
        }
        LayerSpec::Softmax => (Tensor::row_vector(softmax2(x.data()).to_vec()), LayerCache::Softmax),
    })
}

fn layer_backward(
    layer: &LayerSpec,
    cache: &LayerCache,
    pathway: Option<usize>,
    params: &mut ParameterStore,
    dy: Tensor,
) -> Result<Tensor> {
    Ok(match (layer, cache) {
        (LayerSpec::Dense { name, inputs, units }, LayerCache::Dense { input }) => {
            let mut dx = Tensor::zeros(input.rows(), input.cols());
            {
                let w = params.get_mut(&weight_name(name, pathway))?;
                for u in 0..*units {
                    let g = dy.data()[u];
                    if g == 0.0 {
                        continue;
                    }
                    let base = u * inputs;
                    for i in 0..*inputs {
                        w.grad[base + i] += g * input.data()[i];
                        dx.data_mut()[i] += w.value[base + i] * g;
                    }
                }
            }
            let b = params.get_mut(&bias_name(name, pathway))?;
            b.grad.iter_mut().zip(dy.data()).for_each(|(g, d)| *g += d);
            dx
        }
        (
            LayerSpec::Conv1d {
                name,
                channels,
                filters,
                kernel,
            },
            LayerCache::Conv { input },
        ) => {
            let steps = dy.rows();
            let span = kernel * channels;
            let mut dx = Tensor::zeros(input.rows(), input.cols());
            {
                let w = params.get_mut(&weight_name(name, pathway))?;
                for t in 0..steps {
                    let off = t * channels;
                    for f in 0..*filters {
                        let g = dy.get(t, f);
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..span {
                            w.grad[f * span + j] += g * input.data()[off + j];
                            dx.data_mut()[off + j] += w.value[f * span + j] * g;
                        }
                    }
                }
            }
            let b = params.get_mut(&bias_name(name, pathway))?;
            for t in 0..steps {
                for f in 0..*filters {
                    b.grad[f] += dy.get(t, f);
                }
            }
            dx
        }
        (LayerSpec::Relu, LayerCache::Relu { input }) => {
            let mut dx = dy;
            dx.data_mut().iter_mut().zip(input.data()).for_each(|(g, &x)| {
                if x <= 0.0 {
                    *g = 0.0
                }
            });
            dx
        }
        (LayerSpec::Dropout { .. }, LayerCache::Dropout { scale }) => {
            let mut dx = dy;
            if !scale.is_empty() {
                dx.data_mut().iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
            }
            dx
        }
        (LayerSpec::GlobalMaxPool, LayerCache::Pool { argmax, rows }) => {
            let cols = argmax.len();
            let mut dx = Tensor::zeros(*rows, cols);
            for (c, &t) in argmax.iter().enumerate() {
                dx.data_mut()[t * cols + c] = dy.data()[c];
            }
            dx
        }
        _ => return Err(Error::MissingCache),
    })
}

fn run_stack<R: Rng + ?Sized>(
    layers: &[LayerSpec],
    pathway: Option<usize>,
    params: &ParameterStore,
    mut x: Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Vec<LayerCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let (y, c) = layer_forward(layer, pathway, params, x, mode, rng)?;
        caches.push(c);
        x = y;
    }
    Ok((x, caches))
}

/// Runs the network on one input. Dropout masks are drawn from `rng` in
/// `Train` and `McInference` modes only.
pub fn forward<R: Rng + ?Sized>(
    net: &NetworkGraph,
    params: &ParameterStore,
    input: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<([f64; 2], ForwardCache)> {
    net.check_input(input)?;
    let mut pathway_caches = Vec::new();
    let mut pathway_width = 0;
    let head_input = match &net.pathways {
        Some(pw) => {
            let mut joined = Vec::new();
            for i in 0..pw.count {
                let x = Tensor::row_vector(input.row(i).to_vec());
                let (y, caches) = run_stack(&pw.layers, net.pathway_prefix(i), params, x, mode, rng)?;
                pathway_width = y.len();
                joined.extend_from_slice(y.data());
                pathway_caches.push(caches);
            }
            Tensor::row_vector(joined)
        }
        None => input.clone(),
    };
    let (out, head) = run_stack(&net.layers, None, params, head_input, mode, rng)?;
    let probs = [out.data()[0], out.data()[1]];
    Ok((
        probs,
        ForwardCache {
            pathways: pathway_caches,
            pathway_width,
            head,
            probs,
        },
    ))
}

/// Accumulates `scale * d(cross-entropy)/d(param)` into the gradient
/// buffers, reusing the dropout masks stored in `cache`. Pass
/// `scale = 1 / batch_size` to obtain the batch-mean gradient.
pub fn backward(
    net: &NetworkGraph,
    params: &mut ParameterStore,
    cache: &ForwardCache,
    label: usize,
    scale: f64,
) -> Result<()> {
    let expected_pathways = net.pathways.as_ref().map_or(0, |p| p.count);
    if cache.head.len() != net.layers.len() || cache.pathways.len() != expected_pathways {
        return Err(Error::MissingCache);
    }
    // softmax + cross-entropy: dL/dz = p - onehot(label)
    let mut g = Tensor::row_vector(vec![
        scale * (cache.probs[0] - f64::from(label == 0)),
        scale * (cache.probs[1] - f64::from(label == 1)),
    ]);
    let head = &net.layers[..net.layers.len() - 1];
    for (layer, c) in head.iter().zip(&cache.head).rev() {
        g = layer_backward(layer, c, None, params, g)?;
    }
    if let Some(pw) = &net.pathways {
        let w = cache.pathway_width;
        for (i, caches) in cache.pathways.iter().enumerate() {
            let mut gi = Tensor::row_vector(g.data()[i * w..(i + 1) * w].to_vec());
            for (layer, c) in pw.layers.iter().zip(caches).rev() {
                gi = layer_backward(layer, c, net.pathway_prefix(i), params, gi)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn dense(name: &str, inputs: usize, units: usize) -> LayerSpec {
        LayerSpec::Dense {
            name: name.into(),
            inputs,
            units,
        }
    }

    fn linear_softmax(inputs: usize) -> NetworkGraph {
        NetworkGraph::new(
            InputShape::Fixed { rows: 1, cols: inputs },
            None,
            vec![dense("out", inputs, 2), LayerSpec::Softmax],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_even_odds() {
        let net = linear_softmax(4);
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let mut zeroed = params.clone();
        zeroed
            .iter_mut()
            .for_each(|(_, p)| p.value.iter_mut().for_each(|v| *v = 0.0));
        let x = Tensor::row_vector(vec![3.0, -1.0, 0.5, 9.0]);
        assert_eq!(net.predict(&zeroed, &x).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn logit_gradient_is_probs_minus_onehot() {
        let net = linear_softmax(3);
        let mut params = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::row_vector(vec![0.3, -0.2, 0.9]);
        let (p, cache) = forward(&net, &params, &x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        backward(&net, &mut params, &cache, 1, 1.0).unwrap();
        let b = params.get("out.b").unwrap();
        assert!((b.grad[0] - p[0]).abs() < 1e-15);
        assert!((b.grad[1] - (p[1] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_malformed_graphs() {
        let fixed = InputShape::Fixed { rows: 1, cols: 3 };
        assert!(NetworkGraph::new(fixed, None, vec![dense("a", 3, 2)]).is_err());
        assert!(NetworkGraph::new(fixed, None, vec![dense("a", 4, 2), LayerSpec::Softmax]).is_err());
        assert!(NetworkGraph::new(fixed, None, vec![dense("a", 3, 3), LayerSpec::Softmax]).is_err());
        assert!(NetworkGraph::new(
            fixed,
            None,
            vec![dense("a", 3, 2), LayerSpec::Dropout { rate: 1.0 }, LayerSpec::Softmax]
        )
        .is_err());
        let seq = InputShape::Sequence {
            channels: 1,
            min_len: 3,
        };
        let conv = |kernel| LayerSpec::Conv1d {
            name: "c".into(),
            channels: 1,
            filters: 2,
            kernel,
        };
        assert!(NetworkGraph::new(seq, None, vec![conv(2), LayerSpec::GlobalMaxPool, LayerSpec::Softmax]).is_err());
        assert!(NetworkGraph::new(seq, None, vec![conv(3), LayerSpec::GlobalMaxPool, LayerSpec::Softmax]).is_ok());
        assert!(NetworkGraph::new(seq, None, vec![conv(5), LayerSpec::GlobalMaxPool, LayerSpec::Softmax]).is_err());
    }

    #[test]
    fn input_shape_checked() {
        let net = linear_softmax(3);
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(net.predict(&params, &Tensor::row_vector(vec![1.0; 4])).is_err());
    }

    #[test]
    fn mismatched_cache_is_reported() {
        let a = linear_softmax(2);
        let b = NetworkGraph::new(
            InputShape::Fixed { rows: 1, cols: 2 },
            None,
            vec![
                dense("h", 2, 2),
                LayerSpec::Relu,
                dense("out", 2, 2),
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        let mut pa = a.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let pb = b.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let (_, cache) = forward(
            &b,
            &pb,
            &Tensor::row_vector(vec![1.0, 2.0]),
            Mode::Train,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(matches!(
            backward(&a, &mut pa, &cache, 0, 1.0),
            Err(Error::MissingCache)
        ));
    }

    #[test]
    fn graph_json_round_trip() {
        let net = linear_softmax(5);
        let text = serde_json::to_string(&net).unwrap();
        let back: NetworkGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, net);
    }
}
