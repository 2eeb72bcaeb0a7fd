//! Deep autoencoder for compressing tweet vectors.
//!
//! Dense layers with tanh activations everywhere except the output layer,
//! which is a sigmoid. Trained on binary cross-entropy with Adadelta. After
//! training only the encoder half is used to produce codes.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{read_to_string, write_atomic};
use crate::{Error, Result};

/// Probabilities are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` in the loss.
pub const BCE_EPSILON: f64 = 1e-7;

/// Mirror-symmetric layer sizes, e.g. `[200, 128, 64, 20, 64, 128, 200]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layer_sizes: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let n = layer_sizes.len();
        if n < 3 || n % 2 == 0 {
            return Err(Error::Config(format!(
                "autoencoder needs an odd number (>= 3) of layer sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("autoencoder layer sizes must be positive".into()));
        }
        let mid = n / 2;
        let decreasing = layer_sizes[..=mid].windows(2).all(|w| w[0] > w[1]);
        let mirrored = (0..n).all(|i| layer_sizes[i] == layer_sizes[n - 1 - i]);
        if !decreasing || !mirrored {
            return Err(Error::Config(format!(
                "autoencoder layer sizes must shrink strictly to the bottleneck and mirror back, got {layer_sizes:?}"
            )));
        }
        Ok(NetworkSpec { layer_sizes })
    }

    /// Builds `input -> hidden... -> bottleneck -> ...hidden -> input`.
    pub fn symmetric(input: usize, hidden: &[usize], bottleneck: usize) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(bottleneck);
        sizes.extend(hidden.iter().rev());
        sizes.push(input);
        Self::new(sizes)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn bottleneck(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() / 2]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn encoder_layers(&self) -> usize {
        self.num_layers() / 2
    }
}

/// One dense layer: `out = act(in · weights + bias)` with `weights` shaped
/// `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(other: &Layer) -> Self {
        let (i, o) = other.weights.dim();
        Self::zeros(i, o)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn zeros(spec: NetworkSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Network { spec, layers }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let mut net = Self::zeros(spec);
        for layer in &mut net.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.gen_range(-limit..=limit));
        }
        net
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Layer outputs from a forward pass; `outputs[0]` is the input and
/// `outputs[l + 1]` the activation of layer `l`. Rows are samples.
#[derive(Debug, Clone)]
pub struct Activations {
    pub outputs: Vec<Array2<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_width(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn forward_layers(net: &Network, input: ArrayView2<'_, f64>, layers: usize) -> Activations {
    let last = net.spec.num_layers() - 1;
    let mut outputs = Vec::with_capacity(layers + 1);
    outputs.push(input.to_owned());
    for (l, layer) in net.layers.iter().take(layers).enumerate() {
        let mut z = outputs[l].dot(&layer.weights);
        z += &layer.bias;
        if l == last {
            z.mapv_inplace(sigmoid);
        } else {
            z.mapv_inplace(f64::tanh);
        }
        outputs.push(z);
    }
    Activations { outputs }
}

/// Forward pass over a batch (rows are samples).
pub fn forward_batch(net: &Network, input: ArrayView2<'_, f64>) -> Result<Activations> {
    check_width(net.spec.input_dim(), input.ncols())?;
    Ok(forward_layers(net, input, net.spec.num_layers()))
}

pub fn forward(net: &Network, input: &[f64]) -> Result<(Vec<f64>, Activations)> {
    let view = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
    let acts = forward_batch(net, view)?;
    let out = acts.outputs.last().unwrap().row(0).to_vec();
    Ok((out, acts))
}

/// Mean over components of `-[t ln p + (1 - t) ln(1 - p)]`, with `p`
/// clamped away from 0 and 1.
pub fn bce_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    check_width(target.len(), prediction.len())?;
    if target.is_empty() {
        return Err(Error::EmptyData);
    }
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| bce_term(p, t))
        .sum();
    Ok(sum / target.len() as f64)
}

fn bce_term(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn batch_bce(prediction: &Array2<f64>, target: ArrayView2<'_, f64>) -> f64 {
    let total: f64 = Zip::from(prediction)
        .and(&target)
        .fold(0.0, |acc, &p, &t| acc + bce_term(p, t));
    total / prediction.len() as f64
}

/// Gradients with the same shapes as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Backpropagates the batch-mean BCE. With a sigmoid output the output
/// delta is `(p - t) / (batch * width)`.
pub fn backward_batch(
    net: &Network,
    acts: &Activations,
    target: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    let n_layers = net.spec.num_layers();
    if acts.outputs.len() != n_layers + 1 {
        return Err(Error::DimensionMismatch {
            expected: n_layers + 1,
            found: acts.outputs.len(),
        });
    }
    let output = &acts.outputs[n_layers];
    if output.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: output.len(),
            found: target.len(),
        });
    }
    let scale = 1.0 / output.len() as f64;
    let mut delta = (output - &target) * scale;
    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    for l in (0..n_layers).rev() {
        let a_prev = &acts.outputs[l];
        grads.push(Layer {
            weights: a_prev.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        if l > 0 {
            let mut back = delta.dot(&net.layers[l].weights.t());
            Zip::from(&mut back)
                .and(a_prev)
                .for_each(|d, &a| *d *= 1.0 - a * a);
            delta = back;
        }
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

pub fn backward(net: &Network, acts: &Activations, target: &[f64]) -> Result<Gradients> {
    let view = ArrayView2::from_shape((1, target.len()), target).expect("contiguous slice");
    backward_batch(net, acts, view)
}

/// Running averages of squared gradients and squared updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub rho: f64,
    pub epsilon: f64,
    pub sq_grad: Vec<Layer>,
    pub sq_update: Vec<Layer>,
}

impl AdadeltaState {
    pub fn new(net: &Network, rho: f64, epsilon: f64) -> Self {
        let zeros: Vec<Layer> = net.layers.iter().map(Layer::zeros_like).collect();
        AdadeltaState {
            rho,
            epsilon,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }
}

/// Elementwise Adadelta:
/// `E[g²] ← ρE[g²] + (1-ρ)g²`, `Δ = -√(E[Δ²]+ε)/√(E[g²]+ε)·g`,
/// `E[Δ²] ← ρE[Δ²] + (1-ρ)Δ²`, `x ← x + Δ`.
pub fn adadelta_update(
    params: &mut [f64],
    grads: &[f64],
    sq_grad: &mut [f64],
    sq_update: &mut [f64],
    rho: f64,
    epsilon: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        sq_grad[i] = rho * sq_grad[i] + (1.0 - rho) * g * g;
        let delta = -((sq_update[i] + epsilon).sqrt() / (sq_grad[i] + epsilon).sqrt()) * g;
        sq_update[i] = rho * sq_update[i] + (1.0 - rho) * delta * delta;
        params[i] += delta;
    }
}

pub fn adadelta_step(net: &mut Network, grads: &Gradients, state: &mut AdadeltaState) -> Result<()> {
    check_width(net.layers.len(), grads.layers.len())?;
    let (rho, eps) = (state.rho, state.epsilon);
    for (((layer, g), sg), su) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.sq_grad)
        .zip(&mut state.sq_update)
    {
        if layer.weights.dim() != g.weights.dim() || layer.bias.len() != g.bias.len() {
            return Err(Error::DimensionMismatch {
                expected: layer.weights.len(),
                found: g.weights.len(),
            });
        }
        adadelta_update(
            layer.weights.as_slice_mut().expect("standard layout"),
            g.weights.as_slice().expect("standard layout"),
            sg.weights.as_slice_mut().expect("standard layout"),
            su.weights.as_slice_mut().expect("standard layout"),
            rho,
            eps,
        );
        adadelta_update(
            layer.bias.as_slice_mut().expect("standard layout"),
            g.bias.as_slice().expect("standard layout"),
            sg.bias.as_slice_mut().expect("standard layout"),
            su.bias.as_slice_mut().expect("standard layout"),
            rho,
            eps,
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 100,
            batch_size: 32,
            seed: 1,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean BCE over the whole training set after the last epoch.
    pub final_loss: f64,
    /// Mean BCE over the whole training set after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Packs rows into a `(n, width)` matrix, checking widths and that every
/// entry lies in `[0, 1]`.
pub fn to_matrix(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        check_width(width, r.len())?;
        if !r.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "autoencoder input row {i} has entries outside [0, 1]"
            )));
        }
        m.row_mut(i).assign(&ndarray::aview1(r));
    }
    Ok(m)
}

pub fn reconstruction_loss(net: &Network, data: &Array2<f64>) -> Result<f64> {
    let acts = forward_batch(net, data.view())?;
    Ok(batch_bce(acts.outputs.last().unwrap(), data.view()))
}

/// Mini-batch reconstruction training with a seeded shuffle every epoch.
pub fn train(spec: NetworkSpec, data: &[Vec<f64>], params: &TrainParams) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if params.batch_size == 0 {
        return Err(Error::Config("autoencoder batch_size must be positive".into()));
    }
    let matrix = to_matrix(data, spec.input_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut net = Network::init(spec, &mut rng);
    let mut state = AdadeltaState::new(&net, params.rho, params.epsilon);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let x = matrix.select(Axis(0), batch);
            let acts = forward_batch(&net, x.view())?;
            let grads = backward_batch(&net, &acts, x.view())?;
            adadelta_step(&mut net, &grads, &mut state)?;
        }
        epoch_losses.push(reconstruction_loss(&net, &matrix)?);
    }
    let final_loss = match epoch_losses.last() {
        Some(&l) => l,
        None => reconstruction_loss(&net, &matrix)?,
    };
    if !net.is_finite() || !final_loss.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok((
        net,
        TrainReport {
            final_loss,
            epoch_losses,
        },
    ))
}

/// Encoder-half forward pass; the output has the bottleneck width.
pub fn encode(net: &Network, input: &[f64]) -> Result<Vec<f64>> {
    check_width(net.spec.input_dim(), input.len())?;
    let view = ArrayView2::from_shape((1, input.len()), input).expect("contiguous slice");
    let acts = forward_layers(net, view, net.spec.encoder_layers());
    Ok(acts.outputs.last().unwrap().row(0).to_vec())
}

pub fn encode_batch(net: &Network, input: &Array2<f64>) -> Result<Array2<f64>> {
    check_width(net.spec.input_dim(), input.ncols())?;
    let acts = forward_layers(net, input.view(), net.spec.encoder_layers());
    Ok(acts.outputs.into_iter().last().unwrap())
}

const MODEL_FORMAT: &str = "tweet-topics-autoencoder";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    /// Row-major `(rows, cols)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Saves the network as JSON. Floats are written with shortest round-trip
/// formatting, so loading restores the exact weights.
pub fn save_model(path: &Path, net: &Network) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        layer_sizes: net.spec.layer_sizes.clone(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                rows: l.weights.nrows(),
                cols: l.weights.ncols(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&file).expect("model serializes");
    write_atomic(path, json.as_bytes())
}

pub fn load_model(path: &Path) -> Result<Network> {
    let text = read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported model format {} v{}", file.format, file.version),
        ));
    }
    let spec = NetworkSpec::new(file.layer_sizes)?;
    let mut net = Network::zeros(spec);
    if file.layers.len() != net.layers.len() {
        return Err(Error::parse(path, 1, "layer count does not match layer sizes"));
    }
    for (layer, lf) in net.layers.iter_mut().zip(file.layers) {
        if (lf.rows, lf.cols) != layer.weights.dim() || lf.bias.len() != lf.cols {
            return Err(Error::parse(path, 1, "layer shape does not match layer sizes"));
        }
        layer.weights = Array2::from_shape_vec((lf.rows, lf.cols), lf.weights)
            .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        layer.bias = Array1::from_vec(lf.bias);
    }
    Ok(net)
}
