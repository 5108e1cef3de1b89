//! Feedforward classifier: dense layers with ReLU, softmax output and an
//! exact hand-written backward pass for the mean negative log-likelihood.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths of the network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl ArchSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = ArchSpec {
            input_dim,
            hidden_dims,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("all layer widths must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// One dense layer. `weight` is `fan_in × fan_out` so a batch maps as `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Network parameters (also used for gradients and optimizer moments).
///
/// The flat coordinate order is layer by layer, the weight matrix in
/// row-major order followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    arch: ArchSpec,
    layers: Vec<Dense>,
}

impl Params {
    pub fn zeros(arch: &ArchSpec) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Dense {
                weight: Array2::zeros((i, o)),
                bias: Array1::zeros(o),
            })
            .collect();
        Params {
            arch: arch.clone(),
            layers,
        }
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn he_uniform(arch: &ArchSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(arch);
        for layer in &mut params.layers {
            let limit = (6.0 / layer.weight.nrows() as f64).sqrt();
            for w in layer.weight.iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        params
    }

    pub fn from_flat(arch: &ArchSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                flat.len()
            )));
        }
        let mut params = Params::zeros(arch);
        let mut offset = 0;
        for slice in params.slices_mut() {
            let len = slice.len();
            slice.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(params)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for slice in self.slices() {
            flat.extend_from_slice(slice);
        }
        flat
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    /// Contiguous coordinate blocks in flat order.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn get(&self, index: usize) -> f64 {
        let mut index = index;
        for slice in self.slices() {
            if index < slice.len() {
                return slice[index];
            }
            index -= slice.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut index = index;
        for slice in self.slices_mut() {
            if index < slice.len() {
                slice[index] = value;
                return;
            }
            index -= slice.len();
        }
        panic!("parameter index out of range");
    }

    /// `‖w‖²` over every weight and bias.
    pub fn squared_l2_norm(&self) -> f64 {
        self.slices().flatten().map(|w| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|w| w.is_finite())
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.arch == other.arch
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        assert!(self.same_shape(other), "parameter shapes differ");
        for (dst, src) in self.slices_mut().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// Labeled inputs for one loss or gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

struct Trace {
    /// Input followed by every hidden activation.
    activations: Vec<Array2<f64>>,
    /// Hidden pre-activations, one per hidden layer.
    pre_activations: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn check_inputs(params: &Params, inputs: &ArrayView2<'_, f64>) -> Result<()> {
    if inputs.ncols() != params.arch.input_dim {
        return Err(Error::Dimension(format!(
            "input width {} does not match architecture input_dim {}",
            inputs.ncols(),
            params.arch.input_dim
        )));
    }
    Ok(())
}

fn affine(input: &ArrayView2<'_, f64>, layer: &Dense) -> Array2<f64> {
    let mut out = input.dot(&layer.weight);
    out += &layer.bias;
    out
}

fn run(params: &Params, inputs: ArrayView2<'_, f64>, keep_trace: bool) -> Trace {
    let (hidden, last) = params.layers.split_at(params.layers.len() - 1);
    let mut activations = Vec::new();
    let mut pre_activations = Vec::new();
    let mut current = inputs.to_owned();
    for layer in hidden {
        let z = affine(&current.view(), layer);
        let h = z.mapv(|v| v.max(0.0));
        if keep_trace {
            activations.push(std::mem::replace(&mut current, h));
            pre_activations.push(z);
        } else {
            current = h;
        }
    }
    let logits = affine(&current.view(), &last[0]);
    activations.push(current);
    Trace {
        activations,
        pre_activations,
        logits,
    }
}

fn log_softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row.iter() {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        row.mapv_inplace(|v| v - lse);
    }
}

/// Log-probabilities `N × c`, log-sum-exp stabilised.
pub fn log_forward(params: &Params, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_inputs(params, &inputs)?;
    let mut logits = run(params, inputs, false).logits;
    log_softmax_rows(&mut logits);
    Ok(logits)
}

/// Class probabilities `N × c`; every row sums to one.
pub fn forward(params: &Params, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(log_forward(params, inputs)?.mapv(f64::exp))
}

fn check_labels(params: &Params, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if batch.inputs.nrows() != batch.labels.len() {
        return Err(Error::Dimension("batch inputs and labels differ in length".into()));
    }
    let c = params.arch.num_classes;
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= c) {
        return Err(Error::Domain(format!("label {bad} outside [0, {c})")));
    }
    Ok(())
}

fn mean_nll(log_probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in log_probs.rows().into_iter().zip(labels) {
        total -= row[y];
    }
    total / labels.len() as f64
}

/// `(1/N) Σ −log p(y_i | x_i)`.
pub fn nll_loss(params: &Params, batch: &Batch) -> Result<f64> {
    check_labels(params, batch)?;
    let log_probs = log_forward(params, batch.inputs.view())?;
    Ok(mean_nll(&log_probs, &batch.labels))
}

/// Mean NLL and its exact gradient with respect to every parameter.
pub fn loss_and_grad(params: &Params, batch: &Batch) -> Result<(f64, Params)> {
    check_labels(params, batch)?;
    check_inputs(params, &batch.inputs.view())?;
    let trace = run(params, batch.inputs.view(), true);
    let mut log_probs = trace.logits;
    log_softmax_rows(&mut log_probs);
    let loss = mean_nll(&log_probs, &batch.labels);

    let n = batch.len() as f64;
    // d loss / d logits = (softmax - onehot) / N
    let mut delta = log_probs.mapv(f64::exp);
    for (mut row, &y) in delta.rows_mut().into_iter().zip(&batch.labels) {
        row[y] -= 1.0;
    }
    delta.mapv_inplace(|v| v / n);

    let mut grad = Params::zeros(&params.arch);
    for l in (0..params.layers.len()).rev() {
        let input = &trace.activations[l];
        grad.layers[l].weight.assign(&input.t().dot(&delta));
        let bias = &mut grad.layers[l].bias;
        for row in delta.rows() {
            *bias += &row;
        }
        if l > 0 {
            let mut back = delta.dot(&params.layers[l].weight.t());
            ndarray::Zip::from(&mut back)
                .and(&trace.pre_activations[l - 1])
                .for_each(|b, &z| {
                    if z <= 0.0 {
                        *b = 0.0;
                    }
                });
            delta = back;
        }
    }
    Ok((loss, grad))
}

/// Exact gradient of [`nll_loss`].
pub fn backward(params: &Params, batch: &Batch) -> Result<Params> {
    Ok(loss_and_grad(params, batch)?.1)
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences over `coords` sampled coordinates.
///
/// The relative error of one coordinate is
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
/// When `coords` is at least the parameter count every coordinate is checked.
pub fn grad_check(params: &Params, batch: &Batch, step: f64, coords: usize) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Precondition(format!("step must be positive, got {step}")));
    }
    let analytic = backward(params, batch)?;
    let total = params.num_params();
    let indices: Vec<usize> = if coords >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ total as u64);
        rand::seq::index::sample(&mut rng, total, coords).into_vec()
    };

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for idx in indices {
        let original = params.get(idx);
        probe.set(idx, original + step);
        let plus = nll_loss(&probe, batch)?;
        probe.set(idx, original - step);
        let minus = nll_loss(&probe, batch)?;
        probe.set(idx, original);
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.get(idx);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Column-wise gather of `rows` from `source`.
pub(crate) fn gather_rows(source: &ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    source.select(Axis(0), rows)
}
