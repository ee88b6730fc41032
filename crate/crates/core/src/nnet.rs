//! Minimal neural network substrate: dense layers with hand-written
//! backward passes, a named parameter store, AdamW and a finite-difference
//! gradient checker.
//!
//! Everything is `f64`. Activations are row-major batches (`rows = batch`).

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub type Tensor2 = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Forward state kept for the backward pass of one dense layer.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor2,
    output: Tensor2,
    activation: Activation,
}

impl DenseCache {
    pub fn output(&self) -> &Tensor2 {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weight: Tensor2,
    pub bias: Array1<f64>,
    pub input: Tensor2,
}

/// `act(input . W + b)`; `b` is broadcast over rows.
pub fn dense_forward(
    input: &Tensor2,
    weight: &Tensor2,
    bias: &Array1<f64>,
    activation: Activation,
) -> Result<(Tensor2, DenseCache)> {
    ensure!(
        input.ncols() == weight.nrows() && weight.ncols() == bias.len(),
        Contract,
        "dense shapes: input {:?}, weight {:?}, bias {}",
        input.dim(),
        weight.dim(),
        bias.len()
    );
    let mut out = input.dot(weight) + bias;
    if activation == Activation::Tanh {
        out.mapv_inplace(f64::tanh);
    }
    let cache = DenseCache {
        input: input.clone(),
        output: out.clone(),
        activation,
    };
    Ok((out, cache))
}

/// Reverse-mode step through one dense layer.
pub fn dense_backward(cache: &DenseCache, weight: &Tensor2, grad_out: &Tensor2) -> Result<DenseGrads> {
    ensure!(
        grad_out.dim() == cache.output.dim() && weight.dim() == (cache.input.ncols(), cache.output.ncols()),
        Contract,
        "stale cache: upstream grad {:?} vs cached output {:?}",
        grad_out.dim(),
        cache.output.dim()
    );
    let grad_pre = match cache.activation {
        Activation::Identity => grad_out.clone(),
        Activation::Tanh => grad_out * &cache.output.mapv(|y| 1.0 - y * y),
    };
    Ok(DenseGrads {
        weight: cache.input.t().dot(&grad_pre),
        bias: grad_pre.sum_axis(Axis(0)),
        input: grad_pre.dot(&weight.t()),
    })
}

/// Inverted-dropout mask: entries are `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Tensor2 {
    if p <= 0.0 {
        return Array2::ones((rows, cols));
    }
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}

/// Xavier-uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..a))
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor2,
    grad: Tensor2,
    m: Tensor2,
    v: Tensor2,
}

/// Named parameters with gradient and AdamW moment buffers.
///
/// Insertion order is fixed and defines the flat layout used by checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor2) -> Result<ParamId> {
        ensure!(!self.by_name.contains_key(name), Contract, "duplicate parameter {name}");
        let zeros = Array2::zeros(value.dim());
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].value
    }

    /// Bias parameters are stored as `1 x n`; this returns the row.
    pub fn bias(&self, id: ParamId) -> Array1<f64> {
        self.params[id.0].value.row(0).to_owned()
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor2) {
        self.params[id.0].grad += g;
    }

    pub fn accumulate_bias_grad(&mut self, id: ParamId, g: &Array1<f64>) {
        let mut row = self.params[id.0].grad.row_mut(0);
        row += g;
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn shapes(&self) -> Vec<ParamShape> {
        self.params
            .iter()
            .map(|p| ParamShape {
                name: p.name.clone(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
            })
            .collect()
    }

    /// All parameter values concatenated in store order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        for p in &self.params {
            out.extend(p.value.iter().copied());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten). Optimizer state is reset.
    pub fn from_flat(shapes: &[ParamShape], flat: &[f64]) -> Result<Self> {
        let total: usize = shapes.iter().map(|s| s.rows * s.cols).sum();
        ensure!(
            total == flat.len(),
            Data,
            "parameter blob holds {} values, manifest expects {total}",
            flat.len()
        );
        let mut store = Self::new();
        let mut offset = 0;
        for s in shapes {
            let n = s.rows * s.cols;
            let value = Array2::from_shape_vec((s.rows, s.cols), flat[offset..offset + n].to_vec())
                .map_err(|e| Error::Data(e.to_string()))?;
            store.add(&s.name, value)?;
            offset += n;
        }
        Ok(store)
    }

    /// First parameter holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| p.value.iter().any(|v| !v.is_finite()))
            .map(|p| p.name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.learning_rate >= 0.0, Config, "learning_rate must be nonnegative");
        ensure!(self.weight_decay >= 0.0, Config, "weight_decay must be nonnegative");
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            Config,
            "AdamW betas must lie in [0, 1)"
        );
        Ok(())
    }
}

/// One AdamW update using the accumulated gradients. `step` counts from 1.
///
/// Weight decay is decoupled: `theta <- theta - lr * wd * theta` before the
/// bias-corrected Adam step. Gradients are left in place.
pub fn adamw_step(store: &mut ParamStore, cfg: &OptimizerConfig, step: u64) -> Result<()> {
    ensure!(step >= 1, Contract, "optimizer step counts from 1");
    if let Some(p) = store
        .params
        .iter()
        .find(|p| p.grad.iter().any(|g| !g.is_finite()))
    {
        return Err(Error::Numeric(format!("non-finite gradient in {}", p.name)));
    }
    let lr = cfg.learning_rate;
    if lr == 0.0 {
        return Ok(());
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for p in &mut store.params {
        ndarray::Zip::from(&mut p.value)
            .and(&p.grad)
            .and(&mut p.m)
            .and(&mut p.v)
            .for_each(|theta, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
    Ok(())
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: (usize, usize),
    pub entries_checked: usize,
}

impl GradCheckReport {
    /// `Err` names the offending parameter when the error exceeds `tol`.
    pub fn within(&self, tol: f64) -> std::result::Result<(), String> {
        if self.max_rel_error <= tol {
            Ok(())
        } else {
            Err(format!(
                "{}[{:?}]: relative error {:.3e} > {tol:.1e}",
                self.worst_param, self.worst_index, self.max_rel_error
            ))
        }
    }
}

/// Compares the analytic gradients already stored in `store` with central
/// differences of `loss`.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// vanishing gradients from dividing by zero. With `max_per_param` set,
/// larger tensors are checked on a seeded subset of entries.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    mut loss: F,
    h: f64,
    max_per_param: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    const FLOOR: f64 = 1e-7;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: (0, 0),
        entries_checked: 0,
    };
    for idx in 0..store.params.len() {
        let (rows, cols) = store.params[idx].value.dim();
        let n = rows * cols;
        let entries: Vec<usize> = match max_per_param {
            Some(k) if k < n => {
                let mut picked: Vec<usize> = rand::seq::index::sample(rng, n, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        for flat in entries {
            let at = (flat / cols, flat % cols);
            let original = store.params[idx].value[at];
            store.params[idx].value[at] = original + h;
            let plus = loss(store);
            store.params[idx].value[at] = original - h;
            let minus = loss(store);
            store.params[idx].value[at] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = store.params[idx].grad[at];
            let denom = analytic.abs().max(numeric.abs()).max(FLOOR);
            let rel = (analytic - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_param = store.params[idx].name.clone();
                report.worst_index = at;
            }
        }
    }
    report
}
