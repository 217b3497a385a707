//! Held-out likelihood, generation error and bitplane diagnostics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::codec::{equalized_image, BitplaneStack};
use crate::dataset::{CorpusManifest, PatchSource, Split};
use crate::error::{Error, Result};
use crate::generate::{activation_map, generate_image, zero_models, SamplerConfig};
use crate::image_io::{read_pgm_file, BinaryPlane, GrayImage};
use crate::model::{nll, ConvLogisticModel};

/// Held-out NLL of each model, in bits per pixel, keyed by target bitplane.
pub fn eval_nll(
    models: &[ConvLogisticModel],
    holdout: &PatchSource,
    samples: usize,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    models
        .iter()
        .map(|m| {
            let batch = holdout.sample(m.lambda(), m.side(), samples, seed)?;
            Ok((m.lambda(), nll(m, &batch)?))
        })
        .collect()
}

/// [`eval_nll`] over the manifest's held-out images.
pub fn eval_nll_manifest(
    models: &[ConvLogisticModel],
    manifest: &CorpusManifest,
    samples: usize,
    seed: u64,
) -> Result<BTreeMap<usize, f64>> {
    let paths = manifest.split(Split::Holdout);
    if paths.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let depth = models.iter().map(|m| m.lambda()).max().unwrap_or(2);
    eval_nll(models, &PatchSource::load(&paths, depth)?, samples, seed)
}

/// `Σ(g - s)² / Σ(s - mean s)²`, with `reference` center-cropped to the
/// extent of `generated`.
pub fn nmse(reference: &GrayImage, generated: &GrayImage) -> Result<f64> {
    let (dw, dh) = (
        reference.width().checked_sub(generated.width()),
        reference.height().checked_sub(generated.height()),
    );
    let border = match (dw, dh) {
        (Some(dw), Some(dh)) if dw == dh && dw % 2 == 0 => dw / 2,
        _ => {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} generated image is not a centered crop of {}x{}",
                generated.width(),
                generated.height(),
                reference.width(),
                reference.height()
            )))
        }
    };
    let s = if border == 0 {
        reference.clone()
    } else {
        reference.crop(border)?
    };
    let n = s.len() as f64;
    let mean = s.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var: f64 = s.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    let err: f64 = s
        .data()
        .iter()
        .zip(generated.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    if var == 0.0 {
        return Err(Error::InvalidArgument(
            "reference crop has zero variance".into(),
        ));
    }
    Ok(err / var)
}

/// NMSE against the 8-bit rank-equalized source.
pub fn eval_nmse(source: &GrayImage, generated: &GrayImage) -> Result<f64> {
    nmse(&equalized_image(source), generated)
}

/// Normalized histogram of activation-map values over `bins` equal bins of [0, 1].
pub fn activation_histogram(
    model: &ConvLogisticModel,
    plane_sets: &[Vec<BinaryPlane>],
    bins: usize,
) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for parents in plane_sets {
        let refs: Vec<&BinaryPlane> = parents.iter().collect();
        let act = activation_map(model, &refs)?;
        for &a in &act.values {
            counts[((a * bins as f64) as usize).min(bins - 1)] += 1;
        }
        total += act.values.len();
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no activations to histogram".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Pearson correlation of adjacent bits, averaged over horizontal and
/// vertical neighbor pairs. Zero when either direction has no variance.
pub fn nn_correlation(plane: &BinaryPlane) -> f64 {
    let (w, h) = (plane.width(), plane.height());
    let pearson = |pairs: &mut dyn Iterator<Item = (u8, u8)>| -> Option<f64> {
        let (mut n, mut sa, mut sb, mut sab) = (0u64, 0u64, 0u64, 0u64);
        for (a, b) in pairs {
            n += 1;
            sa += a as u64;
            sb += b as u64;
            sab += (a & b) as u64;
        }
        if n == 0 {
            return None;
        }
        let n = n as f64;
        let (ma, mb) = (sa as f64 / n, sb as f64 / n);
        // bits are idempotent, so E[a²] = E[a]
        let va = ma - ma * ma;
        let vb = mb - mb * mb;
        let cov = sab as f64 / n - ma * mb;
        Some(if va > 0.0 && vb > 0.0 {
            (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
        } else {
            0.0
        })
    };
    let bits = plane.bits();
    let horiz = pearson(&mut (0..h).flat_map(|r| {
        (0..w.saturating_sub(1)).map(move |c| (bits[r * w + c], bits[r * w + c + 1]))
    }));
    let vert = pearson(
        &mut (0..h.saturating_sub(1))
            .flat_map(|r| (0..w).map(move |c| (bits[r * w + c], bits[(r + 1) * w + c]))),
    );
    match (horiz, vert) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 0.0,
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let up = parent[parent[x as usize] as usize];
        parent[x as usize] = up;
        x = up;
    }
    x
}

/// Sizes of the 4-connected clusters of ones, in order of first appearance
/// (row-major).
pub fn cluster_sizes(plane: &BinaryPlane) -> Vec<usize> {
    let (w, h) = (plane.width(), plane.height());
    let bits = plane.bits();
    let mut parent: Vec<u32> = (0..(w * h) as u32).collect();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if bits[i] == 0 {
                continue;
            }
            for j in [(c > 0).then(|| i - 1), (r > 0).then(|| i - w)].into_iter().flatten() {
                if bits[j] == 1 {
                    let (a, b) = (find(&mut parent, i as u32), find(&mut parent, j as u32));
                    if a != b {
                        parent[a.max(b) as usize] = a.min(b);
                    }
                }
            }
        }
    }
    let mut slot = vec![u32::MAX; w * h];
    let mut sizes = Vec::new();
    for i in 0..w * h {
        if bits[i] == 1 {
            let root = find(&mut parent, i as u32) as usize;
            if slot[root] == u32::MAX {
                slot[root] = sizes.len() as u32;
                sizes.push(0);
            }
            sizes[slot[root] as usize] += 1;
        }
    }
    sizes
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneDiagnostics {
    pub lambda: usize,
    pub density: f64,
    pub nn_correlation: f64,
    pub n_clusters: usize,
    pub largest_cluster: usize,
    /// cluster size -> number of clusters of that size
    pub cluster_histogram: BTreeMap<usize, usize>,
}

pub fn plane_diagnostics(lambda: usize, plane: &BinaryPlane) -> PlaneDiagnostics {
    let sizes = cluster_sizes(plane);
    let mut cluster_histogram = BTreeMap::new();
    for &s in &sizes {
        *cluster_histogram.entry(s).or_insert(0) += 1;
    }
    PlaneDiagnostics {
        lambda,
        density: plane.density(),
        nn_correlation: nn_correlation(plane),
        n_clusters: sizes.len(),
        largest_cluster: sizes.iter().copied().max().unwrap_or(0),
        cluster_histogram,
    }
}

/// Density, neighbor correlation and cluster statistics for every plane.
pub fn heating_diagnostics(stack: &BitplaneStack) -> Vec<PlaneDiagnostics> {
    stack
        .planes()
        .iter()
        .enumerate()
        .map(|(i, p)| plane_diagnostics(i + 1, p))
        .collect()
}

/// `λ,density,nn_correlation,n_clusters,largest_cluster` rows.
pub fn diagnostics_csv(diags: &[PlaneDiagnostics]) -> String {
    let mut out = String::from("lambda,density,nn_correlation,n_clusters,largest_cluster\n");
    for d in diags {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            d.lambda, d.density, d.nn_correlation, d.n_clusters, d.largest_cluster
        ));
    }
    out
}

/// Kernel weights averaged by (rounded) Euclidean distance from the center tap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialProfile {
    pub center: f64,
    /// `rings[r]` is the mean weight at radius `r`; `rings[0] == center`.
    pub rings: Vec<f64>,
}

pub fn receptive_field_summary(model: &ConvLogisticModel, parent: usize) -> Result<RadialProfile> {
    if parent >= model.parents() {
        return Err(Error::InvalidArgument(format!(
            "model has {} parent kernels, asked for {parent}",
            model.parents()
        )));
    }
    let side = model.side();
    let half = (side / 2) as f64;
    let kernel = model.kernel(parent);
    let max_r = (half * std::f64::consts::SQRT_2).round() as usize;
    let mut sums = vec![0.0; max_r + 1];
    let mut counts = vec![0usize; max_r + 1];
    for i in 0..side {
        for j in 0..side {
            let r = ((i as f64 - half).hypot(j as f64 - half)).round() as usize;
            sums[r] += kernel[i * side + j];
            counts[r] += 1;
        }
    }
    let rings: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(RadialProfile {
        center: kernel[(side / 2) * side + side / 2],
        rings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Planes whose cluster histograms are reported.
    pub cluster_planes: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
            sampler: SamplerConfig::default(),
            cluster_planes: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageEval {
    pub path: PathBuf,
    pub nmse_model: f64,
    pub nmse_null: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Held-out NLL per target bitplane, bits/pixel.
    pub nll: BTreeMap<usize, f64>,
    pub nmse_model: f64,
    pub nmse_null: f64,
    pub images: Vec<ImageEval>,
    /// Held-out means per bitplane.
    pub density: BTreeMap<usize, f64>,
    pub nn_correlation: BTreeMap<usize, f64>,
    /// Pooled over held-out images, for the selected planes.
    pub cluster_histogram: BTreeMap<usize, BTreeMap<usize, usize>>,
}

/// Scores `models` (bitplanes 2..=Λ, one shared kernel size) on the
/// manifest's held-out images.
pub fn evaluate(
    models: &[ConvLogisticModel],
    manifest: &CorpusManifest,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to evaluate".into()));
    }
    let paths = manifest.split(Split::Holdout);
    if paths.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let depth = models.len() + 1;
    let side = models[0].side();
    let images = paths
        .iter()
        .map(|p| Ok((p.clone(), read_pgm_file(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let source = PatchSource::from_images(&images, crate::codec::MAX_DEPTH)?;
    let nll = eval_nll(models, &source, cfg.samples, cfg.seed)?;

    let sampler = SamplerConfig {
        depth,
        ..cfg.sampler.clone()
    };
    let null = zero_models(depth, side)?;
    let mut per_image = Vec::new();
    for (path, img) in &images {
        let trained = generate_image(img, models, &sampler)?;
        let baseline = generate_image(img, &null, &sampler)?;
        per_image.push(ImageEval {
            path: path.clone(),
            nmse_model: eval_nmse(img, &trained.image)?,
            nmse_null: eval_nmse(img, &baseline.image)?,
        });
    }
    let n = per_image.len() as f64;

    let mut density = BTreeMap::new();
    let mut nn_corr = BTreeMap::new();
    let mut cluster_histogram: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for stack in source.stacks() {
        for d in heating_diagnostics(stack) {
            *density.entry(d.lambda).or_insert(0.0) += d.density / n;
            *nn_corr.entry(d.lambda).or_insert(0.0) += d.nn_correlation / n;
            if cfg.cluster_planes.contains(&d.lambda) {
                let hist = cluster_histogram.entry(d.lambda).or_default();
                for (size, count) in d.cluster_histogram {
                    *hist.entry(size).or_insert(0) += count;
                }
            }
        }
    }
    Ok(EvalReport {
        nll,
        nmse_model: per_image.iter().map(|e| e.nmse_model).sum::<f64>() / n,
        nmse_null: per_image.iter().map(|e| e.nmse_null).sum::<f64>() / n,
        images: per_image,
        density,
        nn_correlation: nn_corr,
        cluster_histogram,
    })
}
