//! Corpus manifests and seeded sampling of parent-plane patches.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{decompose_image, BitplaneStack, MAX_DEPTH};
use crate::error::{Error, Result};
use crate::image_io::{read_pgm_file, GrayImage};

pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;

/// Sorted image list with a seeded per-image train/held-out split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    paths: Vec<PathBuf>,
    seed: u64,
    holdout: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

impl CorpusManifest {
    /// Sorts `paths` and assigns `round(n · holdout_fraction)` of them to the
    /// held-out split, keeping at least one image on each side when `n ≥ 2`
    /// and the fraction is positive.
    pub fn new(mut paths: Vec<PathBuf>, seed: u64, holdout_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&holdout_fraction) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction {holdout_fraction} outside [0, 1)"
            )));
        }
        paths.sort();
        paths.dedup();
        let n = paths.len();
        let mut k = (n as f64 * holdout_fraction).round() as usize;
        if n >= 2 && holdout_fraction > 0.0 {
            k = k.clamp(1, n - 1);
        } else if n < 2 {
            k = 0;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut holdout: Vec<PathBuf> = order[..k].iter().map(|&i| paths[i].clone()).collect();
        holdout.sort();
        Ok(Self {
            paths,
            seed,
            holdout,
        })
    }

    /// Every `*.pgm` file directly inside `dir`.
    pub fn from_dir(dir: impl AsRef<Path>, seed: u64, holdout_fraction: f64) -> Result<Self> {
        let dir = dir.as_ref();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let is_pgm = path
                .extension()
                .map(|e| e.eq_ignore_ascii_case("pgm"))
                .unwrap_or(false);
            if is_pgm && path.is_file() {
                paths.push(path);
            }
        }
        if paths.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::new(paths, seed, holdout_fraction)
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn holdout(&self) -> &[PathBuf] {
        &self.holdout
    }

    pub fn split(&self, split: Split) -> Vec<PathBuf> {
        match split {
            Split::Holdout => self.holdout.clone(),
            Split::Train => self
                .paths
                .iter()
                .filter(|p| self.holdout.binary_search(p).is_err())
                .cloned()
                .collect(),
        }
    }

    /// Plain-text form: `seed <n>`, `holdout <paths...>`, then one path per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "seed {}", self.seed).unwrap();
        out.push_str("holdout");
        for p in &self.holdout {
            write!(out, " {}", p.display()).unwrap();
        }
        out.push('\n');
        for p in &self.paths {
            writeln!(out, "{}", p.display()).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut holdout = None;
        let mut paths = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("seed ") {
                let value = rest.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad manifest seed line: {line}"))
                })?;
                seed = Some(value);
            } else if line == "holdout" || line.starts_with("holdout ") {
                let list: Vec<PathBuf> = line["holdout".len()..]
                    .split_whitespace()
                    .map(PathBuf::from)
                    .collect();
                holdout = Some(list);
            } else {
                paths.push(PathBuf::from(line));
            }
        }
        let seed =
            seed.ok_or_else(|| Error::InvalidArgument("manifest has no seed line".into()))?;
        let mut holdout =
            holdout.ok_or_else(|| Error::InvalidArgument("manifest has no holdout line".into()))?;
        paths.sort();
        paths.dedup();
        holdout.sort();
        if let Some(stray) = holdout.iter().find(|h| paths.binary_search(h).is_err()) {
            return Err(Error::InvalidArgument(format!(
                "held-out image {} is not listed in the manifest",
                stray.display()
            )));
        }
        Ok(Self {
            paths,
            seed,
            holdout,
        })
    }
}

/// Location of a sampled patch: source image and patch center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// `M` samples of `λ-1` binary `L×L` parent patches with the target bit at
/// the patch center.
///
/// Features are stored sample-major, then parent plane, then row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchBatch {
    lambda: usize,
    side: usize,
    features: Vec<u8>,
    labels: Vec<u8>,
    origins: Vec<PatchOrigin>,
}

impl PatchBatch {
    pub fn new(lambda: usize, side: usize, features: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        validate_geometry(lambda, side)?;
        let width = (lambda - 1) * side * side;
        if features.len() != labels.len() * width {
            return Err(Error::DimensionMismatch(format!(
                "{} labels need {} feature bits, got {}",
                labels.len(),
                labels.len() * width,
                features.len()
            )));
        }
        if features.iter().chain(labels.iter()).any(|&b| b > 1) {
            return Err(Error::InvalidArgument("patch values must be 0 or 1".into()));
        }
        Ok(Self {
            lambda,
            side,
            features,
            labels,
            origins: Vec::new(),
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

    /// Features per sample, `(λ-1)·L²`.
    pub fn feature_len(&self) -> usize {
        (self.lambda - 1) * self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[u8] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[u8], u8) {
        let w = self.feature_len();
        (&self.features[i * w..(i + 1) * w], self.labels[i])
    }

    /// Sampled origins; empty for batches built directly from arrays.
    pub fn origins(&self) -> &[PatchOrigin] {
        &self.origins
    }

    /// Reorders samples so that sample `i` of the result is sample `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let w = self.feature_len();
        let mut features = Vec::with_capacity(self.features.len());
        for &i in order {
            features.extend_from_slice(&self.features[i * w..(i + 1) * w]);
        }
        Self {
            lambda: self.lambda,
            side: self.side,
            features,
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            origins: if self.origins.is_empty() {
                Vec::new()
            } else {
                order.iter().map(|&i| self.origins[i]).collect()
            },
        }
    }
}

fn validate_geometry(lambda: usize, side: usize) -> Result<()> {
    if !(2..=MAX_DEPTH).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "target bitplane {lambda} outside 2..={MAX_DEPTH}"
        )));
    }
    if side.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "patch side {side} must be odd"
        )));
    }
    Ok(())
}

/// Decomposed images from which patches are drawn.
#[derive(Debug, Clone)]
pub struct PatchSource {
    names: Vec<PathBuf>,
    stacks: Vec<BitplaneStack>,
}

impl PatchSource {
    pub fn from_images(images: &[(PathBuf, GrayImage)], depth: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let stacks = images
            .par_iter()
            .map(|(_, img)| decompose_image(img, depth))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: images.iter().map(|(p, _)| p.clone()).collect(),
            stacks,
        })
    }

    pub fn from_stacks(stacks: Vec<BitplaneStack>) -> Result<Self> {
        if stacks.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let names = (0..stacks.len())
            .map(|i| PathBuf::from(format!("<stack {i}>")))
            .collect();
        Ok(Self { names, stacks })
    }

    pub fn load(paths: &[PathBuf], depth: usize) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let images = paths
            .par_iter()
            .map(|p| Ok((p.clone(), read_pgm_file(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(&images, depth)
    }

    pub fn stacks(&self) -> &[BitplaneStack] {
        &self.stacks
    }

    pub fn names(&self) -> &[PathBuf] {
        &self.names
    }

    /// Draws `count` patch centers uniformly (with replacement) over every
    /// valid center position of every image.
    pub fn sample(&self, lambda: usize, side: usize, count: usize, seed: u64) -> Result<PatchBatch> {
        validate_geometry(lambda, side)?;
        let mut cumulative = Vec::with_capacity(self.stacks.len());
        let mut total = 0usize;
        for (name, stack) in self.names.iter().zip(&self.stacks) {
            if stack.width() < side || stack.height() < side {
                return Err(Error::ImageTooSmall {
                    path: name.clone(),
                    width: stack.width(),
                    height: stack.height(),
                    side,
                });
            }
            if lambda > stack.depth() {
                return Err(Error::DepthExceeded {
                    lambda,
                    depth: stack.depth(),
                });
            }
            total += (stack.width() - side + 1) * (stack.height() - side + 1);
            cumulative.push(total);
        }

        let half = side / 2;
        let width = (lambda - 1) * side * side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(count * width);
        let mut labels = Vec::with_capacity(count);
        let mut origins = Vec::with_capacity(count);
        for _ in 0..count {
            let draw = rng.gen_range(0..total);
            let image = cumulative.partition_point(|&c| c <= draw);
            let offset = draw - if image == 0 { 0 } else { cumulative[image - 1] };
            let stack = &self.stacks[image];
            let cols = stack.width() - side + 1;
            let (top, left) = (offset / cols, offset % cols);
            for plane in &stack.planes()[..lambda - 1] {
                for r in top..top + side {
                    let start = r * plane.width() + left;
                    features.extend_from_slice(&plane.bits()[start..start + side]);
                }
            }
            let (row, col) = (top + half, left + half);
            labels.push(stack.planes()[lambda - 1].get(row, col));
            origins.push(PatchOrigin { image, row, col });
        }
        Ok(PatchBatch {
            lambda,
            side,
            features,
            labels,
            origins,
        })
    }
}

/// Samples a training batch from the manifest's train split.
pub fn sample_batch(
    manifest: &CorpusManifest,
    lambda: usize,
    side: usize,
    count: usize,
    seed: u64,
) -> Result<PatchBatch> {
    sample_split(manifest, Split::Train, lambda, side, count, seed)
}

pub fn sample_split(
    manifest: &CorpusManifest,
    split: Split,
    lambda: usize,
    side: usize,
    count: usize,
    seed: u64,
) -> Result<PatchBatch> {
    validate_geometry(lambda, side)?;
    let paths = manifest.split(split);
    if paths.is_empty() {
        return Err(match split {
            Split::Train => Error::EmptyCorpus,
            Split::Holdout => Error::EmptyHoldout,
        });
    }
    PatchSource::load(&paths, lambda)?.sample(lambda, side, count, seed)
}
