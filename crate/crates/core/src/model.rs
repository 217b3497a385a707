//! Convolutional logistic regression for one conditional `P(B_λ | B_1..B_{λ-1})`.
//!
//! The model is a single logistic unit over `λ-1` shared `L×L` kernels and a
//! bias. Training minimizes the ridge-penalized negative log-likelihood
//!
//! ```text
//! f(θ) = (1/M) Σ_i [softplus(z_i) - y_i z_i] + ρ ‖w‖² / (2M),   z_i = b + Σ_k ⟨w_k, x_ik⟩
//! ```
//!
//! with a Gaussian prior on the kernel weights (the bias is not penalized),
//! using Newton steps solved matrix-free by conjugate gradients and an Armijo
//! backtracking line search.
//!
//! Sums over samples are taken over fixed-size shards combined in shard
//! order, so results do not depend on the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PatchBatch;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const SHARD: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub rho: f64,
    pub iters: usize,
    pub final_nll_bits: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLogisticModel {
    lambda: usize,
    side: usize,
    /// `λ-1` row-major `L×L` kernels, concatenated.
    weights: Vec<f64>,
    bias: f64,
    meta: Option<TrainMeta>,
}

impl ConvLogisticModel {
    /// The null model: every activation is 1/2.
    pub fn zeros(lambda: usize, side: usize) -> Result<Self> {
        check_geometry(lambda, side)?;
        Ok(Self {
            lambda,
            side,
            weights: vec![0.0; (lambda - 1) * side * side],
            bias: 0.0,
            meta: None,
        })
    }

    pub fn new(lambda: usize, side: usize, kernels: Vec<Vec<f64>>, bias: f64) -> Result<Self> {
        check_geometry(lambda, side)?;
        if kernels.len() != lambda - 1 {
            return Err(Error::DimensionMismatch(format!(
                "bitplane {lambda} needs {} kernels, got {}",
                lambda - 1,
                kernels.len()
            )));
        }
        if let Some(k) = kernels.iter().find(|k| k.len() != side * side) {
            return Err(Error::DimensionMismatch(format!(
                "kernel has {} taps, expected {}",
                k.len(),
                side * side
            )));
        }
        let weights: Vec<f64> = kernels.into_iter().flatten().collect();
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        Ok(Self {
            lambda,
            side,
            weights,
            bias,
            meta: None,
        })
    }

    /// Builds a model from a packed parameter vector `[w_1, .., w_{λ-1}, b]`.
    pub fn from_params(lambda: usize, side: usize, params: &[f64]) -> Result<Self> {
        check_geometry(lambda, side)?;
        let n = (lambda - 1) * side * side;
        if params.len() != n + 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                n + 1,
                params.len()
            )));
        }
        Ok(Self {
            lambda,
            side,
            weights: params[..n].to_vec(),
            bias: params[n],
            meta: None,
        })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn parents(&self) -> usize {
        self.lambda - 1
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Kernel applied to parent plane `B_{k+1}`.
    pub fn kernel(&self, k: usize) -> &[f64] {
        let taps = self.side * self.side;
        &self.weights[k * taps..(k + 1) * taps]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn meta(&self) -> Option<&TrainMeta> {
        self.meta.as_ref()
    }

    pub fn with_meta(mut self, meta: TrainMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    /// Largest absolute kernel weight.
    pub fn kernel_max_norm(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Pre-activation `b + Σ_k ⟨w_k, x_k⟩` for a flattened parent patch stack.
    pub fn logit(&self, patches: &[u8]) -> Result<f64> {
        if patches.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "patch stack has {} values, model expects {}",
                patches.len(),
                self.weights.len()
            )));
        }
        Ok(self.bias + dot_bits(patches, &self.weights))
    }

    /// Logistic activation of the target bit given its parent patches.
    pub fn predict_activation(&self, patches: &[u8]) -> Result<f64> {
        self.logit(patches).map(sigmoid)
    }

    fn check_batch(&self, batch: &PatchBatch) -> Result<()> {
        if batch.lambda() != self.lambda || batch.side() != self.side {
            return Err(Error::DimensionMismatch(format!(
                "batch is (λ={}, L={}), model is (λ={}, L={})",
                batch.lambda(),
                batch.side(),
                self.lambda,
                self.side
            )));
        }
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(())
    }
}

fn check_geometry(lambda: usize, side: usize) -> Result<()> {
    if !(2..=crate::codec::MAX_DEPTH).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "target bitplane {lambda} outside 2..=8"
        )));
    }
    if side.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel side {side} must be odd"
        )));
    }
    Ok(())
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Negative log-likelihood in nats of label `y` under logit `z`.
#[inline]
fn logistic_loss(z: f64, y: u8) -> f64 {
    softplus(z) - if y == 1 { z } else { 0.0 }
}

#[inline]
fn dot_bits(x: &[u8], w: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let wc = w.chunks_exact(4);
    let (xr, wr) = (xc.remainder(), wc.remainder());
    for (xs, ws) in xc.zip(wc) {
        for l in 0..4 {
            lanes[l] += xs[l] as f64 * ws[l];
        }
    }
    let mut tail = 0.0;
    for (&xi, &wi) in xr.iter().zip(wr) {
        tail += xi as f64 * wi;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

#[inline]
fn axpy_bits(acc: &mut [f64], c: f64, x: &[u8]) {
    for (a, &xi) in acc.iter_mut().zip(x) {
        *a += c * xi as f64;
    }
}

/// Sums per-shard vectors in shard order.
fn sum_shards(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

fn logits(params: &[f64], batch: &PatchBatch) -> Vec<f64> {
    let n = params.len() - 1;
    let (w, b) = (&params[..n], params[n]);
    batch
        .features()
        .par_chunks(n)
        .map(|x| b + dot_bits(x, w))
        .collect()
}

fn ridge_term(params: &[f64], rho: f64, m: f64) -> f64 {
    let n = params.len() - 1;
    0.5 * rho * params[..n].iter().map(|w| w * w).sum::<f64>() / m
}

fn mean_loss(z: &[f64], labels: &[u8]) -> f64 {
    let parts: Vec<f64> = z
        .par_chunks(SHARD)
        .zip(labels.par_chunks(SHARD))
        .map(|(zs, ys)| zs.iter().zip(ys).map(|(&z, &y)| logistic_loss(z, y)).sum())
        .collect();
    parts.iter().sum::<f64>() / z.len() as f64
}

/// Objective, gradient and per-sample curvature `a(1-a)` at one parameter point.
struct Linearization {
    objective: f64,
    gradient: Vec<f64>,
    curvature: Vec<f64>,
}

fn linearize(params: &[f64], batch: &PatchBatch, rho: f64) -> Linearization {
    let n = params.len() - 1;
    let m = batch.len() as f64;
    let z = logits(params, batch);
    let shards: Vec<(f64, Vec<f64>, Vec<f64>)> = batch
        .features()
        .par_chunks(SHARD * n)
        .zip(batch.labels().par_chunks(SHARD))
        .zip(z.par_chunks(SHARD))
        .map(|((xs, ys), zs)| {
            let mut g = vec![0.0; n + 1];
            let mut loss = 0.0;
            let mut curv = Vec::with_capacity(ys.len());
            for ((x, &y), &zi) in xs.chunks(n).zip(ys).zip(zs) {
                let a = sigmoid(zi);
                let r = a - y as f64;
                loss += logistic_loss(zi, y);
                axpy_bits(&mut g[..n], r, x);
                g[n] += r;
                curv.push(a * (1.0 - a));
            }
            (loss, g, curv)
        })
        .collect();
    let mut loss = 0.0;
    let mut curvature = Vec::with_capacity(batch.len());
    let mut parts = Vec::with_capacity(shards.len());
    for (l, g, c) in shards {
        loss += l;
        curvature.extend(c);
        parts.push(g);
    }
    let mut gradient = sum_shards(parts, n + 1);
    for (j, g) in gradient.iter_mut().enumerate() {
        *g /= m;
        if j < n {
            *g += rho * params[j] / m;
        }
    }
    Linearization {
        objective: loss / m + ridge_term(params, rho, m),
        gradient,
        curvature,
    }
}

fn curvature_product(batch: &PatchBatch, curvature: &[f64], rho: f64, v: &[f64]) -> Vec<f64> {
    let n = v.len() - 1;
    let m = batch.len() as f64;
    let (vw, vb) = (&v[..n], v[n]);
    let parts: Vec<Vec<f64>> = batch
        .features()
        .par_chunks(SHARD * n)
        .zip(curvature.par_chunks(SHARD))
        .map(|(xs, cs)| {
            let mut acc = vec![0.0; n + 1];
            for (x, &c) in xs.chunks(n).zip(cs) {
                let s = c * (dot_bits(x, vw) + vb);
                axpy_bits(&mut acc[..n], s, x);
                acc[n] += s;
            }
            acc
        })
        .collect();
    let mut hv = sum_shards(parts, n + 1);
    for (j, h) in hv.iter_mut().enumerate() {
        *h /= m;
        if j < n {
            *h += rho * v[j] / m;
        }
    }
    hv
}

/// Mean negative log-likelihood in bits per sample.
pub fn nll(model: &ConvLogisticModel, batch: &PatchBatch) -> Result<f64> {
    model.check_batch(batch)?;
    let z = logits(&model.params(), batch);
    Ok(mean_loss(&z, batch.labels()) / std::f64::consts::LN_2)
}

/// Regularized objective (nats per sample) and its gradient.
pub fn objective_grad(
    model: &ConvLogisticModel,
    batch: &PatchBatch,
    rho: f64,
) -> Result<(f64, Vec<f64>)> {
    model.check_batch(batch)?;
    let lin = linearize(&model.params(), batch, rho);
    Ok((lin.objective, lin.gradient))
}

/// Hessian-vector product of the regularized objective, without forming the Hessian.
pub fn hessian_vec(
    model: &ConvLogisticModel,
    batch: &PatchBatch,
    rho: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    model.check_batch(batch)?;
    if v.len() != model.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} entries, model has {} parameters",
            v.len(),
            model.param_count()
        )));
    }
    let params = model.params();
    let curvature: Vec<f64> = logits(&params, batch)
        .into_iter()
        .map(|z| {
            let a = sigmoid(z);
            a * (1.0 - a)
        })
        .collect();
    Ok(curvature_product(batch, &curvature, rho, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Ridge strength on kernel weights.
    pub ridge: f64,
    pub max_newton_iters: usize,
    /// Stop once the gradient max-norm (nats) falls below this.
    pub grad_tol: f64,
    /// Relative residual at which conjugate gradients stop.
    pub cg_tol: f64,
    /// Defaults to the parameter count.
    pub cg_max_iters: Option<usize>,
    pub armijo_c: f64,
    pub shrink: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-3,
            max_newton_iters: 50,
            grad_tol: 1e-8,
            cg_tol: 1e-10,
            cg_max_iters: None,
            armijo_c: 1e-4,
            shrink: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be finite and non-negative");
        }
        if !(self.grad_tol > 0.0 && self.cg_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo constant must lie in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("line-search shrink factor must lie in (0, 1)");
        }
        if self.cg_max_iters == Some(0) {
            return bad("cg_max_iters must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonStep {
    /// Objective after the step, nats per sample.
    pub objective: f64,
    /// Gradient max-norm at the start of the step.
    pub grad_max: f64,
    pub step: f64,
    pub cg_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub initial_objective: f64,
    pub steps: Vec<NewtonStep>,
    pub final_objective: f64,
    pub final_grad_max: f64,
    /// Unregularized training NLL, bits per sample.
    pub final_nll_bits: f64,
    pub converged: bool,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `H d = -g` by conjugate gradients; returns the direction and iteration count.
fn newton_direction(
    batch: &PatchBatch,
    lin: &Linearization,
    rho: f64,
    tol: f64,
    max_iters: usize,
) -> (Vec<f64>, usize) {
    let p = lin.gradient.len();
    let mut d = vec![0.0; p];
    let mut r: Vec<f64> = lin.gradient.iter().map(|g| -g).collect();
    let mut s = r.clone();
    let mut rr = dot(&r, &r);
    let stop = tol * tol * rr;
    let mut iters = 0;
    while iters < max_iters && rr > stop {
        let hs = curvature_product(batch, &lin.curvature, rho, &s);
        let shs = dot(&s, &hs);
        if shs <= 0.0 || !shs.is_finite() {
            // flat direction of a PSD Hessian
            break;
        }
        let alpha = rr / shs;
        for j in 0..p {
            d[j] += alpha * s[j];
            r[j] -= alpha * hs[j];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for j in 0..p {
            s[j] = r[j] + beta * s[j];
        }
        rr = rr_next;
        iters += 1;
    }
    (d, iters)
}

/// Fits a model to `batch` starting from the zero model.
pub fn train(batch: &PatchBatch, config: &TrainConfig) -> Result<(ConvLogisticModel, TrainReport)> {
    config.validate()?;
    let lambda = batch.lambda();
    let side = batch.side();
    let mut model = ConvLogisticModel::zeros(lambda, side)?;
    model.check_batch(batch)?;
    let rho = config.ridge;
    let cg_cap = config.cg_max_iters.unwrap_or(model.param_count());

    let mut params = model.params();
    let mut lin = linearize(&params, batch, rho);
    if !lin.objective.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let initial_objective = lin.objective;
    let mut steps = Vec::new();
    let mut converged = false;

    for iteration in 0..config.max_newton_iters {
        let grad_max = max_norm(&lin.gradient);
        if grad_max < config.grad_tol {
            converged = true;
            break;
        }
        let (mut dir, cg_iters) = newton_direction(batch, &lin, rho, config.cg_tol, cg_cap);
        let mut slope = dot(&lin.gradient, &dir);
        if slope >= 0.0 || slope.is_nan() {
            dir = lin.gradient.iter().map(|g| -g).collect();
            slope = -dot(&lin.gradient, &lin.gradient);
        }

        let mut t = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + t * d).collect();
            let z = logits(&trial, batch);
            let f = mean_loss(&z, batch.labels()) + ridge_term(&trial, rho, batch.len() as f64);
            if f.is_nan() {
                return Err(Error::NonFinite { iteration });
            }
            if f <= lin.objective + config.armijo_c * t * slope {
                break Some(trial);
            }
            t *= config.shrink;
            if t < 1e-20 {
                break None;
            }
        };
        let Some(next) = accepted else {
            log::debug!("line search stalled at newton iteration {iteration}");
            break;
        };
        params = next;
        lin = linearize(&params, batch, rho);
        if !lin.objective.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        log::debug!(
            "newton {iteration}: objective {:.12} step {t} cg {cg_iters}",
            lin.objective
        );
        steps.push(NewtonStep {
            objective: lin.objective,
            grad_max,
            step: t,
            cg_iters,
        });
    }
    let final_grad_max = max_norm(&lin.gradient);
    converged |= final_grad_max < config.grad_tol;

    model = ConvLogisticModel::from_params(lambda, side, &params)?;
    let final_nll_bits = nll(&model, batch)?;
    let report = TrainReport {
        initial_objective,
        final_objective: lin.objective,
        final_grad_max,
        final_nll_bits,
        converged,
        steps,
    };
    let model = model.with_meta(TrainMeta {
        rho,
        iters: report.iterations(),
        final_nll_bits,
        seed: None,
    });
    Ok((model, report))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    lambda: usize,
    #[serde(rename = "L")]
    side: usize,
    parents: usize,
    bias: f64,
    kernels: Vec<Vec<f64>>,
    #[serde(default)]
    train_meta: Option<TrainMeta>,
}

/// Serializes to the versioned JSON model schema.
pub fn save_model(model: &ConvLogisticModel) -> Vec<u8> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        lambda: model.lambda,
        side: model.side,
        parents: model.parents(),
        bias: model.bias,
        kernels: (0..model.parents()).map(|k| model.kernel(k).to_vec()).collect(),
        train_meta: model.meta.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file).expect("model serializes");
    bytes.push(b'\n');
    bytes
}

pub fn load_model(bytes: &[u8]) -> Result<ConvLogisticModel> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::ModelFormat("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if file.lambda < 2 || file.parents != file.lambda - 1 {
        return Err(Error::ModelFormat(format!(
            "parents = {} inconsistent with lambda = {}",
            file.parents, file.lambda
        )));
    }
    let model = ConvLogisticModel::new(file.lambda, file.side, file.kernels, file.bias)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    Ok(match file.train_meta {
        Some(meta) => model.with_meta(meta),
        None => model,
    })
}

pub fn save_model_file(path: impl AsRef<std::path::Path>, model: &ConvLogisticModel) -> Result<()> {
    crate::image_io::write_atomic(path, &save_model(model))
}

pub fn load_model_file(path: impl AsRef<std::path::Path>) -> Result<ConvLogisticModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model(&bytes)
}
