//! Cascade generation of `B_2..B_Λ` conditioned on a given `B_1`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{decompose_image, equalized_image, recompose, BitplaneStack, MAX_DEPTH};
use crate::conv::{correlate_valid, ConvMethod};
use crate::error::{Error, Result};
use crate::image_io::{BinaryPlane, GrayImage};
use crate::model::{sigmoid, ConvLogisticModel};

/// Sampling rule: winner-take-all outside `[low, high]`, Bernoulli inside.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub low: f64,
    pub high: f64,
    pub seed: u64,
    pub depth: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            low: 0.4,
            high: 0.6,
            seed: 0,
            depth: MAX_DEPTH,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low && self.low <= self.high && self.high <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling band [{}, {}] must satisfy 0 <= low <= high <= 1",
                self.low, self.high
            )));
        }
        if !(2..=MAX_DEPTH).contains(&self.depth) {
            return Err(Error::InvalidArgument(format!(
                "generation depth {} outside 2..={MAX_DEPTH}",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Row-major logistic activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ActivationMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

pub fn activation_map(model: &ConvLogisticModel, parents: &[&BinaryPlane]) -> Result<ActivationMap> {
    activation_map_with(model, parents, ConvMethod::Auto)
}

/// Logistic activation at every position where the kernels fit inside the parents.
pub fn activation_map_with(
    model: &ConvLogisticModel,
    parents: &[&BinaryPlane],
    method: ConvMethod,
) -> Result<ActivationMap> {
    if parents.len() != model.parents() {
        return Err(Error::DimensionMismatch(format!(
            "model for bitplane {} needs {} parents, got {}",
            model.lambda(),
            model.parents(),
            parents.len()
        )));
    }
    let kernels: Vec<&[f64]> = (0..model.parents()).map(|k| model.kernel(k)).collect();
    let (height, width, mut values) = correlate_valid(parents, &kernels, model.side(), method)?;
    let bias = model.bias();
    values.par_iter_mut().for_each(|v| *v = sigmoid(bias + *v));
    Ok(ActivationMap {
        width,
        height,
        values,
    })
}

/// Uniform in [0, 1) for every pixel, counter-addressed by `(seed, λ, index)`.
fn row_uniforms(seed: u64, lambda: usize, start: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(lambda as u64);
    // two 32-bit words per 64-bit draw
    rng.set_word_pos(2 * start as u128);
    for u in out.iter_mut() {
        *u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    }
}

/// Binarizes an activation map.
///
/// Activations below `low` give 0 and above `high` give 1; inside the closed
/// band the bit is drawn from Bernoulli(a). When `low == high` the band is a
/// plain threshold with ties going to 1.
pub fn sample_plane(act: &ActivationMap, cfg: &SamplerConfig, lambda: usize) -> Result<BinaryPlane> {
    if !(0.0 <= cfg.low && cfg.low <= cfg.high && cfg.high <= 1.0) {
        return Err(Error::InvalidArgument("invalid sampling band".into()));
    }
    let w = act.width;
    let mut bits = vec![0u8; act.values.len()];
    bits.par_chunks_mut(w)
        .zip(act.values.par_chunks(w))
        .enumerate()
        .for_each_init(
            || vec![0.0; w],
            |uniforms, (r, (out, acts))| {
                row_uniforms(cfg.seed, lambda, r * w, uniforms);
                for ((b, &a), &u) in out.iter_mut().zip(acts).zip(uniforms.iter()) {
                    *b = if cfg.low == cfg.high {
                        (a >= cfg.low) as u8
                    } else if a < cfg.low {
                        0
                    } else if a > cfg.high {
                        1
                    } else {
                        (u < a) as u8
                    };
                }
            },
        );
    BinaryPlane::new(w, act.height, bits)
}

/// Side length lost per axis after the full cascade.
pub fn cascade_shrink(depth: usize, side: usize) -> usize {
    (depth - 1) * (side - 1)
}

fn check_models(models: &[ConvLogisticModel], depth: usize) -> Result<usize> {
    if models.len() + 1 != depth {
        return Err(Error::InvalidArgument(format!(
            "depth {depth} needs {} models, got {}",
            depth - 1,
            models.len()
        )));
    }
    let side = models[0].side();
    for (i, m) in models.iter().enumerate() {
        if m.lambda() != i + 2 {
            return Err(Error::InvalidArgument(format!(
                "model {i} targets bitplane {}, expected {}",
                m.lambda(),
                i + 2
            )));
        }
        if m.side() != side {
            return Err(Error::InvalidArgument("models must share a kernel size".into()));
        }
    }
    Ok(side)
}

/// Generates `B_2..B_Λ` from `b1`, one valid convolution per step.
///
/// After each step the existing planes are cropped by `(L-1)/2` per side to
/// stay aligned with the new plane, so the result is
/// `(H - (Λ-1)(L-1)) × (W - (Λ-1)(L-1))`.
pub fn generate_stack(
    b1: &BinaryPlane,
    models: &[ConvLogisticModel],
    cfg: &SamplerConfig,
) -> Result<BitplaneStack> {
    cfg.validate()?;
    let side = check_models(models, cfg.depth)?;
    let shrink = cascade_shrink(cfg.depth, side);
    if b1.width() <= shrink || b1.height() <= shrink {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} critical plane cannot support {} cascade steps of a {side}x{side} kernel",
            b1.width(),
            b1.height(),
            cfg.depth - 1
        )));
    }
    let half = (side - 1) / 2;
    let mut planes = vec![b1.clone()];
    for model in models {
        let parents: Vec<&BinaryPlane> = planes.iter().collect();
        let act = activation_map(model, &parents)?;
        let next = sample_plane(&act, cfg, model.lambda())?;
        if half > 0 {
            planes = planes
                .iter()
                .map(|p| p.crop(half))
                .collect::<Result<Vec<_>>>()?;
        }
        planes.push(next);
    }
    BitplaneStack::new(planes)
}

/// A generated image and the matching central region of its source.
#[derive(Debug, Clone)]
pub struct Generated {
    pub image: GrayImage,
    pub stack: BitplaneStack,
    /// Raw source intensities over the generated extent.
    pub source_crop: GrayImage,
    /// 8-bit equalized source over the generated extent.
    pub reference: GrayImage,
}

/// Keeps the source's `B_1`, generates the remaining planes and recomposes.
pub fn generate_image(
    source: &GrayImage,
    models: &[ConvLogisticModel],
    cfg: &SamplerConfig,
) -> Result<Generated> {
    cfg.validate()?;
    let stack = decompose_image(source, 1)?;
    let generated = generate_stack(stack.plane(1)?, models, cfg)?;
    let border = cascade_shrink(cfg.depth, models[0].side()) / 2;
    Ok(Generated {
        image: recompose(&generated),
        stack: generated,
        source_crop: source.crop(border)?,
        reference: equalized_image(source).crop(border)?,
    })
}

/// Null models (all weights and biases zero) for bitplanes `2..=depth`.
pub fn zero_models(depth: usize, side: usize) -> Result<Vec<ConvLogisticModel>> {
    (2..=depth)
        .map(|lambda| ConvLogisticModel::zeros(lambda, side))
        .collect()
}
