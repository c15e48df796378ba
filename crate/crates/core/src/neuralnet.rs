//! A small deterministic neural-network engine for the two autoencoders.
//!
//! Layers are dense, valid 1-D convolutions, or zero-padded transposed
//! convolutions, all with stride 1. Activations flow as `batch x features`
//! matrices; convolutional features are flattened channel-major. Convolutions
//! run as im2col followed by a matrix product.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv1d,
    Deconv1d,
}

/// Shape and activation of one layer.
///
/// For dense layers `in_channels`/`out_channels` are the input/output sizes
/// and `kernel_len == in_width == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_len: usize,
    pub in_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(in_size: usize, out_size: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::Dense, in_channels: in_size, out_channels: out_size, kernel_len: 1, in_width: 1, activation }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel_len: usize, in_width: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::Conv1d, in_channels, out_channels, kernel_len, in_width, activation }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel_len: usize, in_width: usize, activation: Activation) -> Self {
        Self { kind: LayerKind::Deconv1d, in_channels, out_channels, kernel_len, in_width, activation }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0 && self.out_channels > 0 && self.kernel_len > 0 && self.in_width > 0;
        let conv_fits = self.kind != LayerKind::Conv1d || self.kernel_len <= self.in_width;
        let dense_flat = self.kind != LayerKind::Dense || (self.kernel_len == 1 && self.in_width == 1);
        if ok && conv_fits && dense_flat {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("invalid layer {self:?}")))
        }
    }

    fn padding(&self) -> usize {
        match self.kind {
            LayerKind::Deconv1d => self.kernel_len - 1,
            _ => 0,
        }
    }

    pub fn out_width(&self) -> usize {
        match self.kind {
            LayerKind::Dense => 1,
            LayerKind::Conv1d => self.in_width - self.kernel_len + 1,
            LayerKind::Deconv1d => self.in_width + self.kernel_len - 1,
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_width()
    }

    fn weight_cols(&self) -> usize {
        self.in_channels * self.kernel_len
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.weight_cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }
}

/// A layer with its parameters. Weights are `out_channels x (in_channels * kernel_len)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            spec,
            weights: Array2::zeros((spec.out_channels, spec.weight_cols())),
            bias: Array1::zeros(spec.out_channels),
        }
    }

    /// He-uniform for relu layers, LeCun-uniform for linear ones; zero bias.
    fn init(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = spec.weight_cols() as f64;
        let limit = match spec.activation {
            Activation::Relu => (6.0 / fan_in).sqrt(),
            Activation::Linear => (3.0 / fan_in).sqrt(),
        };
        let mut layer = Self::zeros(spec);
        layer.weights.mapv_inplace(|_| rng.random_range(-limit..limit));
        layer
    }
}

/// Which architecture a model was built as; recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Custom = 0,
    FullyConnected = 1,
    Convolutional = 2,
}

impl Architecture {
    fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Self::Custom),
            1 => Ok(Self::FullyConnected),
            2 => Ok(Self::Convolutional),
            _ => Err(Error::Checkpoint(format!("unknown architecture id {id}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeModel {
    pub architecture: Architecture,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    pub seed: u64,
    /// Mean squared error of each training epoch.
    pub history: Vec<f64>,
}

impl DaeModel {
    /// Builds a model from layer specs with seeded random initialization.
    pub fn from_specs(architecture: Architecture, encoder: &[LayerSpec], decoder: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self {
            architecture,
            encoder: encoder.iter().map(|s| Layer::init(*s, &mut rng)).collect(),
            decoder: decoder.iter().map(|s| Layer::init(*s, &mut rng)).collect(),
            seed,
            history: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::InvalidModel("encoder and decoder need at least one layer".into()));
        }
        let layers: Vec<&Layer> = self.layers().collect();
        for l in &layers {
            l.spec.validate()?;
            if l.weights.dim() != (l.spec.out_channels, l.spec.weight_cols()) || l.bias.len() != l.spec.out_channels {
                return Err(Error::InvalidModel(format!("parameter shape does not match {:?}", l.spec)));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].spec.output_len() != pair[1].spec.input_len() {
                return Err(Error::InvalidModel(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].spec.output_len(),
                    pair[1].spec.input_len()
                )));
            }
        }
        if self.output_dim() != self.input_dim() {
            return Err(Error::InvalidModel("reconstruction size differs from input size".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].spec.input_len()
    }

    pub fn output_dim(&self) -> usize {
        self.decoder.last().map_or(0, |l| l.spec.output_len())
    }

    /// Number of latent units M (flattened channel-major for conv models).
    pub fn latent_size(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.spec.output_len())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.spec.param_count()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>, width: usize) -> Result<()> {
        if x.ncols() != width {
            return Err(Error::ShapeMismatch { expected: format!("{width} columns"), actual: format!("{} columns", x.ncols()) });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Encodes a batch (one row per frame) into latent rows of length M.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x, self.input_dim())?;
        Ok(run_chain(&self.encoder, x.to_owned()))
    }

    /// Decodes latent rows back to feature rows.
    pub fn decode(&self, latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&latent, self.latent_size())?;
        Ok(run_chain(&self.decoder, latent.to_owned()))
    }

    /// Returns `(reconstruction, latent)` for a batch.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let latent = self.encode(x)?;
        let recon = run_chain(&self.decoder, latent.clone());
        Ok((recon, latent))
    }

    /// Forward for a single feature vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (r, l) = self.forward(view)?;
        Ok((r.into_raw_vec_and_offset().0, l.into_raw_vec_and_offset().0))
    }
}

/// Dense chain 301-1024-512-256-128-256-512-1024-301; relu hidden, linear output.
pub fn build_dae_f(input_dim: usize, seed: u64) -> Result<DaeModel> {
    if input_dim == 0 {
        return Err(Error::InvalidModel("input dimension must be positive".into()));
    }
    let sizes = [input_dim, 1024, 512, 256, 128, 256, 512, 1024, input_dim];
    let specs: Vec<LayerSpec> = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == sizes.len() { Activation::Linear } else { Activation::Relu };
            LayerSpec::dense(w[0], w[1], act)
        })
        .collect();
    DaeModel::from_specs(Architecture::FullyConnected, &specs[..4], &specs[4..], seed)
}

/// Convolutional encoder (32/16/8 filters, kernels 4/3/3, valid) and
/// transposed-convolution decoder (8/16/32/1 filters, kernels 3/3/4/1).
pub fn build_dae_c(input_dim: usize, seed: u64) -> Result<DaeModel> {
    if input_dim < 8 {
        return Err(Error::InvalidModel(format!("input dimension {input_dim} is too small for three valid convolutions")));
    }
    use Activation::{Linear, Relu};
    let w0 = input_dim;
    let encoder = [
        LayerSpec::conv(1, 32, 4, w0, Relu),
        LayerSpec::conv(32, 16, 3, w0 - 3, Relu),
        LayerSpec::conv(16, 8, 3, w0 - 5, Relu),
    ];
    let latent_w = w0 - 7;
    let decoder = [
        LayerSpec::deconv(8, 8, 3, latent_w, Relu),
        LayerSpec::deconv(8, 16, 3, latent_w + 2, Relu),
        LayerSpec::deconv(16, 32, 4, latent_w + 4, Relu),
        LayerSpec::deconv(32, 1, 1, w0, Linear),
    ];
    DaeModel::from_specs(Architecture::Convolutional, &encoder, &decoder, seed)
}

// ---------------------------------------------------------------------------
// Forward / backward kernels
// ---------------------------------------------------------------------------

/// Batch activations. Dense layers use `batch x features`; conv layers use
/// `channels x (batch * width)` so consecutive convolutions need no reshuffle.
#[derive(Clone)]
struct Act {
    data: Array2<f64>,
    channel_major: bool,
    batch: usize,
}

impl Act {
    fn rows(data: Array2<f64>) -> Self {
        let batch = data.nrows();
        Self { data, channel_major: false, batch }
    }

    /// Converts to the layout `spec` expects as input; returns whether a conversion happened.
    fn for_input(self, spec: &LayerSpec) -> (Self, bool) {
        let want_cm = spec.kind != LayerKind::Dense;
        if self.channel_major == want_cm {
            return (self, false);
        }
        let converted = if want_cm {
            rows_to_channels(&self.data, spec.in_channels, spec.in_width)
        } else {
            channels_to_rows(&self.data, self.batch)
        };
        (Self { data: converted, channel_major: want_cm, batch: self.batch }, true)
    }

    fn into_rows(self) -> Array2<f64> {
        if self.channel_major {
            channels_to_rows(&self.data, self.batch)
        } else {
            self.data
        }
    }
}

/// `batch x (C * W)` to `C x (batch * W)`.
fn rows_to_channels(x: &Array2<f64>, channels: usize, width: usize) -> Array2<f64> {
    let batch = x.nrows();
    let mut out = Array2::zeros((channels, batch * width));
    for b in 0..batch {
        let src = x.row(b);
        let src = src.as_slice().expect("contiguous row");
        for c in 0..channels {
            let mut row = out.row_mut(c);
            row.as_slice_mut().expect("contiguous")[b * width..(b + 1) * width]
                .copy_from_slice(&src[c * width..(c + 1) * width]);
        }
    }
    out
}

/// `C x (batch * W)` to `batch x (C * W)`.
fn channels_to_rows(x: &Array2<f64>, batch: usize) -> Array2<f64> {
    let channels = x.nrows();
    let width = x.ncols() / batch.max(1);
    let mut out = Array2::zeros((batch, channels * width));
    for c in 0..channels {
        let src = x.row(c);
        let src = src.as_slice().expect("contiguous row");
        for b in 0..batch {
            let mut row = out.row_mut(b);
            row.as_slice_mut().expect("contiguous")[c * width..(c + 1) * width]
                .copy_from_slice(&src[b * width..(b + 1) * width]);
        }
    }
    out
}

struct LayerCache {
    input: Array2<f64>,
    input_converted: bool,
    /// im2col matrix for conv layers.
    cols: Option<Array2<f64>>,
    output: Array2<f64>,
}

fn run_chain(layers: &[Layer], x: Array2<f64>) -> Array2<f64> {
    let mut act = Act::rows(x);
    for layer in layers {
        let (input, _) = act.for_input(&layer.spec);
        let (out, _) = layer_forward(layer, &input.data, input.batch);
        act = Act { data: out, channel_major: layer.spec.kind != LayerKind::Dense, batch: input.batch };
    }
    act.into_rows()
}

fn activate(z: &mut Array2<f64>, act: Activation) {
    if act == Activation::Relu {
        z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
    }
}

/// Valid range of output positions for kernel tap `k`: position t reads input t + k - pad.
fn tap_range(spec: &LayerSpec, k: usize) -> (usize, usize) {
    let pad = spec.padding();
    let lo = pad.saturating_sub(k);
    let hi = spec.out_width().min(spec.in_width + pad - k);
    (lo, hi)
}

fn im2col(spec: &LayerSpec, x: &Array2<f64>, batch: usize) -> Array2<f64> {
    let (k_len, win, wout, pad) = (spec.kernel_len, spec.in_width, spec.out_width(), spec.padding());
    let mut cols = Array2::zeros((spec.weight_cols(), batch * wout));
    for i in 0..spec.in_channels {
        let src = x.row(i);
        let src = src.as_slice().expect("contiguous row");
        for k in 0..k_len {
            let (lo, hi) = tap_range(spec, k);
            let mut row = cols.row_mut(i * k_len + k);
            let dst = row.as_slice_mut().expect("contiguous");
            for b in 0..batch {
                let s0 = b * win + lo + k - pad;
                dst[b * wout + lo..b * wout + hi].copy_from_slice(&src[s0..s0 + hi - lo]);
            }
        }
    }
    cols
}

fn col2im(spec: &LayerSpec, dcols: &Array2<f64>, batch: usize) -> Array2<f64> {
    let (k_len, win, wout, pad) = (spec.kernel_len, spec.in_width, spec.out_width(), spec.padding());
    let mut dx = Array2::zeros((spec.in_channels, batch * win));
    for i in 0..spec.in_channels {
        let mut dst = dx.row_mut(i);
        let dst = dst.as_slice_mut().expect("contiguous row");
        for k in 0..k_len {
            let (lo, hi) = tap_range(spec, k);
            let src = dcols.row(i * k_len + k);
            let src = src.as_slice().expect("contiguous");
            for b in 0..batch {
                let d0 = b * win + lo + k - pad;
                for (d, s) in dst[d0..d0 + hi - lo].iter_mut().zip(&src[b * wout + lo..b * wout + hi]) {
                    *d += s;
                }
            }
        }
    }
    dx
}

/// Returns the activated output (in the layer's native layout) and, for conv layers, the im2col matrix.
fn layer_forward(layer: &Layer, x: &Array2<f64>, batch: usize) -> (Array2<f64>, Option<Array2<f64>>) {
    let spec = &layer.spec;
    match spec.kind {
        LayerKind::Dense => {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            activate(&mut z, spec.activation);
            (z, None)
        }
        LayerKind::Conv1d | LayerKind::Deconv1d => {
            let cols = im2col(spec, x, batch);
            let mut z = layer.weights.dot(&cols);
            for (mut row, &b) in z.rows_mut().into_iter().zip(layer.bias.iter()) {
                row += b;
            }
            activate(&mut z, spec.activation);
            (z, Some(cols))
        }
    }
}

/// Gradients for one layer plus the gradient with respect to its input (input layout).
fn layer_backward(layer: &Layer, cache: &LayerCache, dy: Array2<f64>, batch: usize) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let spec = &layer.spec;
    let mut dz = dy;
    if spec.activation == Activation::Relu {
        // Subgradient at 0 is 0.
        dz.zip_mut_with(&cache.output, |g, &y| {
            if y <= 0.0 {
                *g = 0.0
            }
        });
    }
    match spec.kind {
        LayerKind::Dense => {
            let dw = dz.t().dot(&cache.input);
            let db = dz.sum_axis(Axis(0));
            let dx = dz.dot(&layer.weights);
            (dw, db, dx)
        }
        LayerKind::Conv1d | LayerKind::Deconv1d => {
            let cols = cache.cols.as_ref().expect("conv cache holds im2col");
            let dw = dz.dot(&cols.t());
            let db = dz.sum_axis(Axis(1));
            let dcols = layer.weights.t().dot(&dz);
            let dx = col2im(spec, &dcols, batch);
            (dw, db, dx)
        }
    }
}

#[derive(Debug, Clone)]
struct Gradients {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Forward + backward on a batch; returns per-sample squared error sums and
/// the gradient of the batch MSE (mean over all elements).
fn batch_gradients(model: &DaeModel, x: &Array2<f64>) -> (Vec<f64>, Gradients) {
    let layers: Vec<&Layer> = model.layers().collect();
    let batch = x.nrows();
    let mut caches: Vec<LayerCache> = Vec::with_capacity(layers.len());
    let mut act = Act::rows(x.clone());
    for layer in &layers {
        let (input, converted) = act.for_input(&layer.spec);
        let (out, cols) = layer_forward(layer, &input.data, batch);
        act = Act { data: out.clone(), channel_major: layer.spec.kind != LayerKind::Dense, batch };
        caches.push(LayerCache { input: input.data, input_converted: converted, cols, output: out });
    }
    let out_cm = act.channel_major;
    let recon = act.into_rows();
    let diff = &recon - x;
    let per_sample: Vec<f64> = diff.rows().into_iter().map(|r| r.iter().map(|d| d * d).sum()).collect();
    let scale = 2.0 / (x.len() as f64);
    let mut grad = diff * scale;
    let last = layers.last().expect("non-empty model").spec;
    if out_cm {
        grad = rows_to_channels(&grad, last.out_channels, last.out_width());
    }

    let mut weights = Vec::with_capacity(layers.len());
    let mut biases = Vec::with_capacity(layers.len());
    for (i, (layer, cache)) in layers.iter().zip(&caches).enumerate().rev() {
        let (dw, db, mut dx) = layer_backward(layer, cache, grad, batch);
        if cache.input_converted {
            // Undo the layout change applied on the way in.
            dx = if layer.spec.kind == LayerKind::Dense {
                let prev = layers[i - 1].spec;
                rows_to_channels(&dx, prev.out_channels, prev.out_width())
            } else {
                channels_to_rows(&dx, batch)
            };
        }
        weights.push(dw);
        biases.push(db);
        grad = dx;
    }
    weights.reverse();
    biases.reverse();
    (per_sample, Gradients { weights, biases })
}
/// Mean squared reconstruction error over all elements of `x`.
pub fn mse(model: &DaeModel, x: ArrayView2<f64>) -> Result<f64> {
    let (recon, _) = model.forward(x)?;
    Ok((&recon - &x).mapv(|d| d * d).mean().unwrap_or(0.0))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stop after this many epochs without `min_improvement`.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 1e-3, batch_size: 128, patience: 20, min_improvement: 1e-6 }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    fn new(model: &DaeModel) -> Self {
        let zeros = Gradients {
            weights: model.layers().map(|l| Array2::zeros(l.weights.dim())).collect(),
            biases: model.layers().map(|l| Array1::zeros(l.bias.len())).collect(),
        };
        Self { step: 0, m: zeros.clone(), v: zeros }
    }

    fn apply(&mut self, model: &mut DaeModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for (i, layer) in model.layers_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut self.m.weights[i])
                .and(&mut self.v.weights[i])
                .and(&grads.weights[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut self.m.biases[i])
                .and(&mut self.v.biases[i])
                .and(&grads.biases[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Trains the autoencoder to reproduce `data` (one frame per row) with Adam on the MSE.
///
/// Epoch losses are accumulated per sample and summed in index order, so the
/// recorded history does not depend on the shuffle. Returns the epoch history
/// of this call; it is also appended to `model.history`.
pub fn train(model: &mut DaeModel, data: ArrayView2<f64>, config: &TrainConfig) -> Result<Vec<f64>> {
    model.check_input(&data, model.input_dim())?;
    if data.nrows() == 0 {
        return Err(Error::InvalidConfig("training data has no rows".into()));
    }
    if config.batch_size == 0 || config.learning_rate.is_nan() || config.learning_rate < 0.0 {
        return Err(Error::InvalidConfig("batch size must be positive and learning rate nonnegative".into()));
    }
    let n = data.nrows();
    let dims = data.ncols() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0x005e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(model);
    let mut per_sample = vec![0.0; n];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(Axis(0), chunk);
            let (errors, grads) = batch_gradients(model, &batch);
            for (&idx, e) in chunk.iter().zip(errors) {
                per_sample[idx] = e;
            }
            adam.apply(model, &grads, config.learning_rate);
        }
        let epoch_mse = per_sample.iter().sum::<f64>() / (n as f64 * dims);
        if !epoch_mse.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(epoch_mse);
        model.history.push(epoch_mse);

        if epoch_mse < best - config.min_improvement {
            best = epoch_mse;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

/// Largest relative disagreement between backprop and central finite
/// differences (step 1e-5) over every parameter, for the MSE of a single input.
///
/// Relative error is `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn gradient_check(model: &DaeModel, x: &[f64]) -> Result<f64> {
    let input = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|e| Error::ShapeMismatch { expected: "vector".into(), actual: e.to_string() })?;
    model.check_input(&input.view(), model.input_dim())?;
    let (_, grads) = batch_gradients(model, &input);
    let analytic = backprop_gradients(&grads);

    const STEP: f64 = 1e-5;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut idx = 0;
    let n_layers = model.encoder.len() + model.decoder.len();
    for li in 0..n_layers {
        let n_w = layer_at(&probe, li).weights.len();
        let n_b = layer_at(&probe, li).bias.len();
        for pi in 0..n_w + n_b {
            let original = param_at(&mut probe, li, pi, None);
            param_at(&mut probe, li, pi, Some(original + STEP));
            let plus = mse(&probe, input.view())?;
            param_at(&mut probe, li, pi, Some(original - STEP));
            let minus = mse(&probe, input.view())?;
            param_at(&mut probe, li, pi, Some(original));
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    Ok(worst)
}

/// Backprop gradient of the single-input MSE, flattened in layer order (weights then bias).
pub fn parameter_gradients(model: &DaeModel, x: &[f64]) -> Result<Vec<f64>> {
    let input = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|e| Error::ShapeMismatch { expected: "vector".into(), actual: e.to_string() })?;
    model.check_input(&input.view(), model.input_dim())?;
    let (_, grads) = batch_gradients(model, &input);
    Ok(backprop_gradients(&grads))
}

fn backprop_gradients(grads: &Gradients) -> Vec<f64> {
    grads
        .weights
        .iter()
        .zip(&grads.biases)
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
        .collect()
}

fn layer_at(model: &DaeModel, index: usize) -> &Layer {
    model.layers().nth(index).expect("layer index")
}

fn param_at(model: &mut DaeModel, layer: usize, index: usize, set: Option<f64>) -> f64 {
    let l = model.layers_mut().nth(layer).expect("layer index");
    let n_w = l.weights.len();
    let slot = if index < n_w {
        l.weights.iter_mut().nth(index).expect("weight index")
    } else {
        &mut l.bias[index - n_w]
    };
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"PULMODAE";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes the model.
///
/// Layout (all integers little-endian): magic `PULMODAE`, u32 version, u32
/// architecture id, u64 seed, u32 encoder layer count, u32 decoder layer
/// count; per layer: u8 kind (0 dense, 1 conv, 2 deconv), u8 activation
/// (0 relu, 1 linear), 2 pad bytes, u32 in_channels, u32 out_channels, u32
/// kernel_len, u32 in_width. Then for each layer in order the weights
/// (`out_channels x in_channels x kernel_len`, row-major) and biases as f64.
/// Finally u32 history length and that many f64 epoch losses.
pub fn checkpoint_bytes(model: &DaeModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.architecture as u32).to_le_bytes());
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.extend_from_slice(&(model.encoder.len() as u32).to_le_bytes());
    out.extend_from_slice(&(model.decoder.len() as u32).to_le_bytes());
    for l in model.layers() {
        let kind = match l.spec.kind {
            LayerKind::Dense => 0u8,
            LayerKind::Conv1d => 1,
            LayerKind::Deconv1d => 2,
        };
        let act = match l.spec.activation {
            Activation::Relu => 0u8,
            Activation::Linear => 1,
        };
        out.extend_from_slice(&[kind, act, 0, 0]);
        for v in [l.spec.in_channels, l.spec.out_channels, l.spec.kernel_len, l.spec.in_width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for l in model.layers() {
        for v in l.weights.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(model.history.len() as u32).to_le_bytes());
    for v in &model.history {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let bytes = &self.data[self.pos..end];
        self.pos = end;
        Ok(bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn model_from_bytes(data: &[u8]) -> Result<DaeModel> {
    let mut r = ByteReader { data, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let architecture = Architecture::from_id(r.u32()?)?;
    let seed = r.u64()?;
    let n_enc = r.u32()? as usize;
    let n_dec = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_enc + n_dec);
    for _ in 0..n_enc + n_dec {
        let head = r.take(4)?;
        let kind = match head[0] {
            0 => LayerKind::Dense,
            1 => LayerKind::Conv1d,
            2 => LayerKind::Deconv1d,
            k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
        };
        let activation = match head[1] {
            0 => Activation::Relu,
            1 => Activation::Linear,
            a => return Err(Error::Checkpoint(format!("unknown activation {a}"))),
        };
        let (in_channels, out_channels, kernel_len, in_width) =
            (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let spec = LayerSpec { kind, in_channels, out_channels, kernel_len, in_width, activation };
        spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        specs.push(spec);
    }
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut layer = Layer::zeros(spec);
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = r.f64()?;
        }
        layers.push(layer);
    }
    let n_hist = r.u32()? as usize;
    let history = (0..n_hist).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != data.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let decoder = layers.split_off(n_enc);
    let model = DaeModel { architecture, encoder: layers, decoder, seed, history };
    model.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(model)
}

pub fn save_checkpoint(model: &DaeModel, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DaeModel> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    model_from_bytes(&data)
}
