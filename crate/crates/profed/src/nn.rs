//! One-hidden-layer MLP with softmax cross-entropy and ADAM.
//!
//! Parameters live in a single flat `Vec<f64>` laid out `[W1, b1, W2, b2]`
//! (matrices row-major, input-by-hidden and hidden-by-output). The flat
//! layout is what federation averages and what checkpoints store; matrix
//! views are borrowed from it on demand.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Flat parameter vector of a `input -> hidden -> output` MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    shape: (usize, usize, usize),
    values: Vec<f64>,
}

/// Number of parameters of an MLP of the given shape.
pub fn param_count(shape: (usize, usize, usize)) -> usize {
    let (i, h, o) = shape;
    i * h + h + h * o + o
}

impl ModelParams {
    pub fn new(shape: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let (i, h, o) = shape;
        if i == 0 || h == 0 || o == 0 {
            return Err(Error::DimensionMismatch(format!(
                "model shape {shape:?} has a zero dimension"
            )));
        }
        if values.len() != param_count(shape) {
            return Err(Error::DimensionMismatch(format!(
                "{} values for shape {:?} (expected {})",
                values.len(),
                shape,
                param_count(shape)
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "non-finite parameter at index {pos}"
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: (usize, usize, usize)) -> Self {
        Self {
            shape,
            values: vec![0.0; param_count(shape)],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn w1_end(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    fn b1_end(&self) -> usize {
        self.w1_end() + self.shape.1
    }

    fn w2_end(&self) -> usize {
        self.b1_end() + self.shape.1 * self.shape.2
    }

    pub fn w1(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape.0, self.shape.1), &self.values[..self.w1_end()])
            .expect("layout invariant")
    }

    pub fn b1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[self.w1_end()..self.b1_end()])
    }

    pub fn w2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (self.shape.1, self.shape.2),
            &self.values[self.b1_end()..self.w2_end()],
        )
        .expect("layout invariant")
    }

    pub fn b2(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[self.w2_end()..])
    }
}

/// Training hyperparameters shared by every algorithm.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0001,
            batch_size: 32,
            local_epochs: 2,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".to_string()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local epochs must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Per-coordinate ADAM moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Uniform initialization scaled by each layer's fan-in, zero biases.
///
/// Weights draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, W1 first then W2,
/// row-major within each matrix, so a seed fixes the model exactly.
pub fn init_mlp(
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    init_seed: u64,
) -> Result<ModelParams> {
    let shape = (input_dim, hidden_dim, output_dim);
    let mut params = ModelParams::zeros(shape);
    if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
        return Err(Error::DimensionMismatch(format!(
            "model shape {shape:?} has a zero dimension"
        )));
    }
    let mut rng = seed::rng(init_seed);
    let b1_end = params.b1_end();
    let w2_end = params.w2_end();
    let bound1 = 1.0 / (input_dim as f64).sqrt();
    for w in &mut params.values[..input_dim * hidden_dim] {
        *w = rng.random_range(-bound1..bound1);
    }
    let bound2 = 1.0 / (hidden_dim as f64).sqrt();
    for w in &mut params.values[b1_end..w2_end] {
        *w = rng.random_range(-bound2..bound2);
    }
    Ok(params)
}

/// ReLU hidden layer then linear output; returns logits, no softmax.
pub fn forward(params: &ModelParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (din, _, _) = params.shape;
    if x.ncols() != din {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, model expects {din}",
            x.ncols()
        )));
    }
    let mut a = x.dot(&params.w1());
    a += &params.b1();
    a.mapv_inplace(|z| z.max(0.0));
    let mut logits = a.dot(&params.w2());
    logits += &params.b2();
    Ok(logits)
}

/// In-place row softmax with max subtraction; returns mean NLL of `labels`.
fn softmax_rows_nll(p: &mut Array2<f64>, labels: &[usize]) -> f64 {
    let mut nll = 0.0;
    for (mut row, &y) in p.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
        nll -= row[y].max(f64::MIN_POSITIVE).ln();
    }
    nll / labels.len().max(1) as f64
}

/// Mean batch loss (cross-entropy plus `wd/2 * ||theta||^2`) and its full
/// gradient, written into `grad`.
///
/// Backprop is exact for the forward above; the L2 term contributes
/// `wd * theta` on every coordinate, biases included.
pub fn loss_and_grad_into(
    params: &ModelParams,
    x: ArrayView2<f64>,
    labels: &[usize],
    weight_decay: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let (din, dh, dout) = params.shape;
    let b = x.nrows();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if x.ncols() != din {
        return Err(Error::DimensionMismatch(format!(
            "input has {} features, model expects {din}",
            x.ncols()
        )));
    }
    if labels.len() != b {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient buffer of {} for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= dout) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: dout,
        });
    }

    let mut a = x.dot(&params.w1());
    a += &params.b1();
    a.mapv_inplace(|z| z.max(0.0));
    let mut p = a.dot(&params.w2());
    p += &params.b2();
    let data_loss = softmax_rows_nll(&mut p, labels);

    // p becomes dLoss/dlogits.
    let inv_b = 1.0 / b as f64;
    for (mut row, &y) in p.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v * inv_b);
    }

    let (gw1, rest) = grad.split_at_mut(din * dh);
    let (gb1, rest) = rest.split_at_mut(dh);
    let (gw2, gb2) = rest.split_at_mut(dh * dout);

    let mut gw2v = ArrayViewMut2::from_shape((dh, dout), gw2).expect("layout invariant");
    general_mat_mul(1.0, &a.t(), &p, 0.0, &mut gw2v);
    gb2.copy_from_slice(p.sum_axis(Axis(0)).as_slice().expect("contiguous"));

    let mut da = p.dot(&params.w2().t());
    ndarray::Zip::from(&mut da).and(&a).for_each(|d, &act| {
        if act <= 0.0 {
            *d = 0.0;
        }
    });
    let mut gw1v = ArrayViewMut2::from_shape((din, dh), gw1).expect("layout invariant");
    general_mat_mul(1.0, &x.t(), &da, 0.0, &mut gw1v);
    gb1.copy_from_slice(da.sum_axis(Axis(0)).as_slice().expect("contiguous"));

    let mut squared_norm = 0.0;
    for (g, &w) in grad.iter_mut().zip(&params.values) {
        *g += weight_decay * w;
        squared_norm += w * w;
    }
    Ok(data_loss + 0.5 * weight_decay * squared_norm)
}

/// Allocating convenience wrapper around [`loss_and_grad_into`].
pub fn loss_and_grad(
    params: &ModelParams,
    x: ArrayView2<f64>,
    labels: &[usize],
    weight_decay: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let loss = loss_and_grad_into(params, x, labels, weight_decay, &mut grad)?;
    Ok((loss, grad))
}

/// One bias-corrected ADAM update, in place.
///
/// Rejects non-finite gradient entries before touching any state, so a
/// failed step leaves parameters and moments unchanged.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    grad: &[f64],
    hyper: &Hyperparams,
) -> Result<()> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient of {} and state of {} for {} parameters",
            grad.len(),
            state.m.len(),
            params.len()
        )));
    }
    if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(pos));
    }
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.values[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

/// Accuracy and mean cross-entropy over a dataset, evaluated in chunks.
///
/// Argmax ties go to the lowest class index.
pub fn evaluate(params: &ModelParams, dataset: &LabeledDataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    let mut correct = 0usize;
    let mut nll_total = 0.0;
    let chunk = 512;
    let features = dataset.features();
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let x = features.slice(s![start..end, ..]);
        let labels = &dataset.labels()[start..end];
        let mut p = forward(params, x)?;
        for (row, &y) in p.rows().into_iter().zip(labels) {
            let mut best = 0;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            if best == y {
                correct += 1;
            }
        }
        nll_total += softmax_rows_nll(&mut p, labels) * labels.len() as f64;
    }
    Ok((correct as f64 / n as f64, nll_total / n as f64))
}

/// Writes shape (three u64) then values (f64), all little-endian.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * params.len());
    let (i, h, o) = params.shape;
    for dim in [i as u64, h as u64, o as u64] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() < 24 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 24,
            actual: bytes.len(),
        });
    }
    let dim = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * (i + 1)].try_into().unwrap()) as usize;
    let shape = (dim(0), dim(1), dim(2));
    let expected = 24 + 8 * param_count(shape);
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::new(shape, values)
}
