//! A small multilayer perceptron, the sub-network oracle over a binarized layer,
//! and activation patching.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{BitPattern, SubsetMask};
use crate::dataset::{ActivationDataset, Record};
use crate::error::{invalid, Error, Result};
use crate::oracle::{PatternOracle, ProjectionOracle};
use crate::spectrum::{truth_table, wht_exact};
use crate::synth::multitier_pattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => (z > 0.0) as u8 as f64,
            Activation::Identity => 1.0,
        }
    }
}

/// An affine map `rows × cols` followed by an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let layer = Layer { rows, cols, weights, bias, activation };
        layer.validate()?;
        Ok(layer)
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(invalid("layer dimensions must be positive"));
        }
        if self.weights.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch { expected: self.rows * self.cols, found: self.weights.len() });
        }
        if self.bias.len() != self.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, found: self.bias.len() });
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::Numeric("layer parameters must be finite".into()));
        }
        Ok(())
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut z = self.pre_activation(input);
        for v in &mut z {
            *v = self.activation.apply(*v);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// Training-time dropout on each layer's output; the last entry is unused.
    #[serde(default)]
    pub dropout: Vec<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>, dropout: Vec<f64>) -> Result<Self> {
        let net = Mlp { layers, dropout };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("a network needs at least one layer"));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::DimensionMismatch { expected: pair[0].rows, found: pair[1].cols });
            }
        }
        if !self.dropout.is_empty() && self.dropout.len() != self.layers.len() {
            return Err(Error::DimensionMismatch { expected: self.layers.len(), found: self.dropout.len() });
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(invalid(format!("dropout rate {p} outside [0,1)")));
        }
        Ok(())
    }

    /// He-uniform initialization, zero biases; ReLU on hidden layers, identity output.
    pub fn random(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid("layer sizes need an input and an output width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let weights = (0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)).collect();
                let act = if k + 2 == sizes.len() { Activation::Identity } else { Activation::Relu };
                Layer::new(w[1], w[0], weights, vec![0.0; w[1]], act)
            })
            .collect::<Result<_>>()?;
        Mlp::new(layers, Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    /// Width at layer `l`: 0 is the input, `k` the output of layer `k`.
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim()
        } else {
            self.layers[l - 1].rows
        }
    }

    fn check_input(&self, input: &[f64], dim: usize) -> Result<()> {
        if input.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: input.len() });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_from(0, input)
    }

    /// Runs layers `l+1..` on an activation vector of layer `l`.
    pub fn forward_from(&self, l: usize, activation: &[f64]) -> Result<Vec<f64>> {
        if l > self.depth() {
            return Err(Error::IndexOutOfRange { index: l, n: self.depth() + 1 });
        }
        self.check_input(activation, self.width(l))?;
        Ok(self.layers[l..].iter().fold(activation.to_vec(), |a, layer| layer.forward(&a)))
    }

    /// Activations at every layer, input first.
    pub fn forward_all(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input, self.input_dim())?;
        let mut out = vec![input.to_vec()];
        for layer in &self.layers {
            let next = layer.forward(out.last().unwrap());
            out.push(next);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Mlp = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mean squared error over samples and outputs, no dropout.
    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        check_samples(self, inputs, targets)?;
        let sum: f64 = inputs
            .par_iter()
            .zip(targets)
            .map(|(x, t)| {
                let y = self.forward(x)?;
                Ok(y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        Ok(sum / (inputs.len() * self.output_dim()) as f64)
    }

    /// Mean squared error and its gradient over the given samples, optionally with
    /// dropout masks drawn from `rng`. The gradient is laid out like the
    /// parameters: per layer, weights then bias.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        check_samples(self, inputs, targets)?;
        let scale = 1.0 / (inputs.len() * self.output_dim()) as f64;
        let mut grads: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.weights.len() + l.bias.len()]).collect();
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            // forward, keeping pre-activations and dropout masks
            let mut acts = vec![x.clone()];
            let mut pres = Vec::with_capacity(self.depth());
            let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.depth());
            for (k, layer) in self.layers.iter().enumerate() {
                let z = layer.pre_activation(acts.last().unwrap());
                let mut a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
                let rate = self.dropout.get(k).copied().unwrap_or(0.0);
                let mask = match dropout_rng.as_deref_mut() {
                    Some(rng) if rate > 0.0 && k + 1 < self.depth() => {
                        let keep = 1.0 - rate;
                        let m: Vec<f64> =
                            (0..a.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                        for (v, s) in a.iter_mut().zip(&m) {
                            *v *= s;
                        }
                        Some(m)
                    }
                    _ => None,
                };
                pres.push(z);
                masks.push(mask);
                acts.push(a);
            }
            let y = acts.last().unwrap();
            let mut delta: Vec<f64> = y.iter().zip(t).map(|(a, b)| 2.0 * (a - b) * scale).collect();
            loss += y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * scale;
            for k in (0..self.depth()).rev() {
                let layer = &self.layers[k];
                if let Some(m) = &masks[k] {
                    for (d, s) in delta.iter_mut().zip(m) {
                        *d *= s;
                    }
                }
                for (d, z) in delta.iter_mut().zip(&pres[k]) {
                    *d *= layer.activation.derivative(*z);
                }
                let input = &acts[k];
                let g = &mut grads[k];
                for (r, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (gw, xi) in g[r * layer.cols..(r + 1) * layer.cols].iter_mut().zip(input) {
                        *gw += d * xi;
                    }
                    g[layer.weights.len() + r] += d;
                }
                if k > 0 {
                    let mut back = vec![0.0; layer.cols];
                    for (r, d) in delta.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        for (b, w) in back.iter_mut().zip(&layer.weights[r * layer.cols..(r + 1) * layer.cols]) {
                            *b += d * w;
                        }
                    }
                    delta = back;
                }
            }
        }
        Ok((loss, grads))
    }

    fn apply_update(&mut self, step: &[Vec<f64>]) {
        for (layer, s) in self.layers.iter_mut().zip(step) {
            let nw = layer.weights.len();
            for (w, d) in layer.weights.iter_mut().zip(&s[..nw]) {
                *w += d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&s[nw..]) {
                *b += d;
            }
        }
    }
}

fn check_samples(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), found: targets.len() });
    }
    for (x, t) in inputs.iter().zip(targets) {
        net.check_input(x, net.input_dim())?;
        if t.len() != net.output_dim() {
            return Err(Error::DimensionMismatch { expected: net.output_dim(), found: t.len() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Widths from input to output.
    pub sizes: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Dropout on every hidden layer.
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
    /// Stop early once the evaluation MSE is below this.
    #[serde(default)]
    pub target_mse: Option<f64>,
}

fn default_momentum() -> f64 {
    0.9
}

/// Full-batch below this many samples, mini-batches of [`MINI_BATCH`] above.
pub const FULL_BATCH_LIMIT: usize = 4096;
pub const MINI_BATCH: usize = 64;

/// Gradient descent with momentum on the mean squared error.
pub fn train_mlp(inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &TrainConfig) -> Result<(Mlp, f64)> {
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(invalid("learning rate must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(invalid("momentum must lie in [0,1)"));
    }
    let mut net = Mlp::random(&cfg.sizes, cfg.seed)?;
    if cfg.dropout > 0.0 {
        net.dropout = vec![cfg.dropout; net.depth()];
        net.validate()?;
    }
    check_samples(&net, inputs, targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut velocity: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.weights.len() + l.bias.len()]).collect();
    let full_batch = inputs.len() <= FULL_BATCH_LIMIT;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut mse = net.mse(inputs, targets)?;
    let use_dropout = cfg.dropout > 0.0;

    for epoch in 0..cfg.epochs {
        if let Some(target) = cfg.target_mse {
            if mse < target {
                log::debug!("target MSE reached after {epoch} epochs");
                break;
            }
        }
        let batches: Vec<Vec<usize>> = if full_batch {
            vec![order.clone()]
        } else {
            order.shuffle(&mut rng);
            order.chunks(MINI_BATCH).map(|c| c.to_vec()).collect()
        };
        let mut epoch_loss = 0.0;
        for batch in batches {
            let xs: Vec<Vec<f64>> = batch.iter().map(|&i| inputs[i].clone()).collect();
            let ts: Vec<Vec<f64>> = batch.iter().map(|&i| targets[i].clone()).collect();
            let (loss, grad) = net.loss_and_gradient(&xs, &ts, use_dropout.then_some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training diverged at epoch {epoch}: loss {loss}")));
            }
            epoch_loss += loss * batch.len() as f64;
            for (v, g) in velocity.iter_mut().zip(&grad) {
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = cfg.momentum * *vi - cfg.learning_rate * gi;
                }
            }
            net.apply_update(&velocity);
        }
        mse = if use_dropout || !full_batch {
            net.mse(inputs, targets)?
        } else {
            // the batch loss is the pre-update MSE; refresh only when it matters
            if cfg.target_mse.is_some() || epoch + 1 == cfg.epochs {
                net.mse(inputs, targets)?
            } else {
                epoch_loss / inputs.len() as f64
            }
        };
        if !mse.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch}")));
        }
    }
    let mse = net.mse(inputs, targets)?;
    Ok((net, mse))
}

/// Weights of `x^S` by the table entry index of `S`.
fn multitier_coefficients() -> Vec<f64> {
    wht_exact(&truth_table(4, multitier_pattern))
        .expect("16-entry table")
        .coeffs()
        .to_vec()
}

/// A two-layer ReLU network computing `Σ_S f̂(S) x^S` for the multi-tier function.
///
/// For each nonempty `S` with `|S| = k`, the parity is a function of the sum
/// `s = Σ_{i∈S} x_i ∈ {-k, -k+2, …, k}` alternating between ±1, so it is the
/// piecewise-linear interpolant `(-1)^k + Σ_j c_j ReLU(s - t_j)` with `k` units
/// (kinks at `t_0 = -k` and the interior points). The output layer sums them with
/// the spectrum's weights; constants go into the output bias.
pub fn build_multitier_net() -> Mlp {
    let coeffs = multitier_coefficients();
    let mut hidden_w = Vec::new();
    let mut hidden_b = Vec::new();
    let mut out_w = Vec::new();
    let mut out_b = coeffs[0];
    for index in 1..16u64 {
        let s = SubsetMask::from_index(4, index);
        let k = s.len() as i32;
        let weight = coeffs[index as usize];
        // value at s = -k is (-1)^k
        out_b += weight * if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut prev_slope = 0.0;
        for j in 0..k {
            let slope = if (k - 1 - j) % 2 == 0 { 1.0 } else { -1.0 };
            let row: Vec<f64> = (0..4).map(|i| s.contains(i) as u8 as f64).collect();
            hidden_w.extend(row);
            hidden_b.push(-(-k + 2 * j) as f64);
            out_w.push(weight * (slope - prev_slope));
            prev_slope = slope;
        }
    }
    let units = hidden_b.len();
    let hidden = Layer::new(units, 4, hidden_w, hidden_b, Activation::Relu).expect("consistent shapes");
    let output = Layer::new(1, units, out_w, vec![out_b], Activation::Identity).expect("consistent shapes");
    Mlp::new(vec![hidden, output], Vec::new()).expect("chained layers")
}

/// Which output of the full network is the pseudo-Boolean value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Logit(usize),
    /// `logit[a] - logit[b]`.
    LogitDiff(usize, usize),
    /// The only output of a one-output network.
    Scalar,
}

impl Selector {
    fn validate(self, out_dim: usize) -> Result<()> {
        let check = |i: usize| {
            if i < out_dim {
                Ok(())
            } else {
                Err(Error::IndexOutOfRange { index: i, n: out_dim })
            }
        };
        match self {
            Selector::Logit(i) => check(i),
            Selector::LogitDiff(a, b) => check(a).and(check(b)),
            Selector::Scalar if out_dim == 1 => Ok(()),
            Selector::Scalar => Err(invalid(format!("scalar selector on a {out_dim}-output network"))),
        }
    }

    pub fn select(self, output: &[f64]) -> f64 {
        match self {
            Selector::Logit(i) => output[i],
            Selector::LogitDiff(a, b) => output[a] - output[b],
            Selector::Scalar => output[0],
        }
    }
}

/// Per-neuron statistics of a layer over a reference input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub mean: Vec<f64>,
    /// Mean over inputs where the neuron is active (`> 0`); 0 if it never is.
    pub mean_positive: Vec<f64>,
    /// Mean over inputs where it is not; 0 if it always is.
    pub mean_nonpositive: Vec<f64>,
}

/// The sub-network from layer `layer` to a selected output.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetOracle {
    net: Mlp,
    layer: usize,
    selector: Selector,
    stats: Option<LayerStats>,
}

/// How a binary pattern is turned into a value.
pub enum QueryMode<'a> {
    /// Map ±1 to per-neuron representative activations and run the upper layers.
    Promote,
    /// The recorded value when the pattern was observed, 0 otherwise.
    Projection(&'a ProjectionOracle),
}

impl SubnetOracle {
    pub fn new(net: Mlp, layer: usize, selector: Selector) -> Result<Self> {
        net.validate()?;
        if layer >= net.depth() {
            return Err(Error::IndexOutOfRange { index: layer, n: net.depth() });
        }
        selector.validate(net.output_dim())?;
        Ok(SubnetOracle { net, layer, selector, stats: None })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn selector(&self) -> Selector {
        self.selector
    }

    pub fn width(&self) -> usize {
        self.net.width(self.layer)
    }

    pub fn stats(&self) -> Option<&LayerStats> {
        self.stats.as_ref()
    }

    /// Layer activations for each input.
    pub fn layer_activations(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        inputs
            .par_iter()
            .map(|x| {
                self.net.check_input(x, self.net.input_dim())?;
                Ok(self.net.layers[..self.layer].iter().fold(x.clone(), |a, l| l.forward(&a)))
            })
            .collect()
    }

    /// Computes the reference statistics over `inputs`.
    pub fn fit_stats(&mut self, inputs: &[Vec<f64>]) -> Result<&LayerStats> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let acts = self.layer_activations(inputs)?;
        let w = self.width();
        let (mut sum, mut pos, mut neg) = (vec![0.0; w], vec![0.0; w], vec![0.0; w]);
        let mut pos_count = vec![0usize; w];
        for a in &acts {
            for j in 0..w {
                sum[j] += a[j];
                if a[j] > 0.0 {
                    pos[j] += a[j];
                    pos_count[j] += 1;
                } else {
                    neg[j] += a[j];
                }
            }
        }
        let count = acts.len();
        let avg = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        self.stats = Some(LayerStats {
            mean: sum.iter().map(|s| s / count as f64).collect(),
            mean_positive: (0..w).map(|j| avg(pos[j], pos_count[j])).collect(),
            mean_nonpositive: (0..w).map(|j| avg(neg[j], count - pos_count[j])).collect(),
        });
        Ok(self.stats.as_ref().unwrap())
    }

    /// The selected value of the full forward pass.
    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.selector.select(&self.net.forward(input)?))
    }

    /// Sign pattern of the layer: activation `> 0` is +1, anything else -1.
    pub fn binarize(activation: &[f64]) -> BitPattern {
        let bits: Vec<bool> = activation.iter().map(|&a| a > 0.0).collect();
        BitPattern::from_bools(&bits)
    }

    fn promote(&self, pattern: &BitPattern) -> Result<f64> {
        let stats = self
            .stats
            .as_ref()
            .ok_or_else(|| invalid("promote mode needs layer statistics; call fit_stats first"))?;
        if pattern.n() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), found: pattern.n() });
        }
        let a: Vec<f64> = (0..self.width())
            .map(|j| if pattern.bit(j) { stats.mean_positive[j] } else { stats.mean_nonpositive[j] })
            .collect();
        Ok(self.selector.select(&self.net.forward_from(self.layer, &a)?))
    }

    pub fn query_pattern(&self, pattern: &BitPattern, mode: &QueryMode<'_>) -> Result<f64> {
        match mode {
            QueryMode::Promote => self.promote(pattern),
            QueryMode::Projection(proj) => {
                if pattern.n() != self.width() {
                    return Err(Error::DimensionMismatch { expected: self.width(), found: pattern.n() });
                }
                proj.query(pattern)
            }
        }
    }
}

impl PatternOracle for SubnetOracle {
    fn n(&self) -> usize {
        self.width()
    }

    fn query(&self, pattern: &BitPattern) -> Result<f64> {
        self.promote(pattern)
    }
}

/// One record per input: the binarized layer pattern and the selected output.
pub fn extract_activation_dataset(oracle: &SubnetOracle, inputs: &[Vec<f64>]) -> Result<ActivationDataset> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<(Vec<f64>, Record)> = inputs
        .par_iter()
        .map(|x| {
            let acts = oracle.net.forward_all(x)?;
            let layer = acts[oracle.layer].clone();
            let value = oracle.selector.select(acts.last().unwrap());
            let pattern = SubnetOracle::binarize(&layer);
            Ok((layer, Record::new(pattern, value)))
        })
        .collect::<Result<_>>()?;
    let continuous: HashSet<Vec<u64>> = rows.iter().map(|(a, _)| a.iter().map(|v| v.to_bits()).collect()).collect();
    let patterns: HashSet<&BitPattern> = rows.iter().map(|(_, r)| &r.pattern).collect();
    log::info!(
        "layer {}: {} distinct activation vectors, {} distinct binary patterns{}",
        oracle.layer,
        continuous.len(),
        patterns.len(),
        if continuous.len() == patterns.len() { " (one-to-one)" } else { "" }
    );
    ActivationDataset::new(oracle.width(), rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    /// Fraction of inputs whose argmax changes when the whole subset is patched.
    pub per_subset: Vec<f64>,
    /// `(neuron, fraction)` for every neuron in some subset, patched alone.
    pub per_variable: Vec<(usize, f64)>,
    /// Fraction of (input, subset) cases where the group outcome differs from
    /// "some member flips the argmax on its own".
    pub disagreement: f64,
}

fn argmax(v: &[f64]) -> usize {
    if v.len() == 1 {
        return (v[0] > 0.0) as usize;
    }
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Patches neurons of the oracle's layer (active to 0, inactive to the dataset
/// mean activation) and records argmax flips. A one-output network flips when
/// its sign changes.
pub fn intervene_flip_rate(oracle: &SubnetOracle, subsets: &[SubsetMask], inputs: &[Vec<f64>]) -> Result<FlipReport> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stats = oracle.stats.as_ref().ok_or_else(|| invalid("interventions need layer statistics; call fit_stats first"))?;
    let w = oracle.width();
    for s in subsets {
        if s.n() != w {
            return Err(Error::DimensionMismatch { expected: w, found: s.n() });
        }
    }
    let mut vars: Vec<usize> = subsets.iter().flat_map(|s| s.indices()).collect();
    vars.sort_unstable();
    vars.dedup();
    let acts = oracle.layer_activations(inputs)?;

    let patched = |a: &[f64], members: &[usize]| -> Result<bool> {
        let before = argmax(&oracle.net.forward_from(oracle.layer, a)?);
        let mut b = a.to_vec();
        for &j in members {
            b[j] = if a[j] > 0.0 { 0.0 } else { stats.mean[j] };
        }
        Ok(argmax(&oracle.net.forward_from(oracle.layer, &b)?) != before)
    };

    let per_input: Vec<(Vec<bool>, Vec<bool>)> = acts
        .par_iter()
        .map(|a| {
            let groups = subsets.iter().map(|s| patched(a, &s.indices())).collect::<Result<Vec<_>>>()?;
            let singles = vars.iter().map(|&v| patched(a, &[v])).collect::<Result<Vec<_>>>()?;
            Ok((groups, singles))
        })
        .collect::<Result<_>>()?;

    let count = inputs.len() as f64;
    let per_subset = (0..subsets.len())
        .map(|k| per_input.iter().filter(|(g, _)| g[k]).count() as f64 / count)
        .collect();
    let per_variable = vars
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, per_input.iter().filter(|(_, s)| s[k]).count() as f64 / count))
        .collect();
    let mut disagree = 0usize;
    for (groups, singles) in &per_input {
        for (k, s) in subsets.iter().enumerate() {
            let any_single = s.iter().any(|v| singles[vars.binary_search(&v).unwrap()]);
            disagree += (groups[k] != any_single) as usize;
        }
    }
    let cases = per_input.len() * subsets.len();
    Ok(FlipReport {
        per_subset,
        per_variable,
        disagreement: if cases == 0 { 0.0 } else { disagree as f64 / cases as f64 },
    })
}

/// One input feeding two identical ReLU units that push three logits in opposite
/// directions. Patching either unit alone hands the argmax to another class;
/// patching both restores the balance, so the original class stays on top.
///
/// The logits scale with the input and class 0 keeps a 0.1 bias margin, so the
/// singleton flips hold for every input above 2/15.
pub fn build_cancellation_net() -> Mlp {
    let hidden = Layer::new(2, 1, vec![1.0, 1.0], vec![0.0, 0.0], Activation::Relu).expect("shape");
    let output =
        Layer::new(3, 2, vec![0.5, 0.5, 1.25, -0.75, -0.75, 1.25], vec![0.1, 0.0, 0.0], Activation::Identity)
            .expect("shape");
    Mlp::new(vec![hidden, output], Vec::new()).expect("chained layers")
}
