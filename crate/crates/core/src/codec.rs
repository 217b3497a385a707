//! Rank equalization and the hierarchical median-threshold bitplane code.
//!
//! Every pixel is assigned its normalized rank `u = (r + 0.5) / N` in the
//! total order (intensity ascending, ties broken by row-major index). Bitplane
//! `λ` is then the `λ`-th binary digit of `u`: plane 1 splits the pixels at the
//! median, plane 2 splits each half at its own median, and so on.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image_io::{
    image_to_plane, plane_to_image, read_pgm_file, write_pgm_file, BinaryPlane,
    GrayImage,
};

pub const MAX_DEPTH: usize = 8;
pub const DEFAULT_DEPTH: usize = 8;

/// Histogram-equalized image: the rank of every pixel in the total order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankField {
    width: usize,
    height: usize,
    ranks: Vec<u32>,
}

impl RankField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Integer ranks `0..N`, row-major.
    pub fn ranks(&self) -> &[u32] {
        &self.ranks
    }

    /// Normalized rank of pixel `index`, strictly inside (0, 1).
    pub fn u(&self, index: usize) -> f64 {
        (self.ranks[index] as f64 + 0.5) / self.ranks.len() as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.ranks.len()).map(|i| self.u(i)).collect()
    }

    /// The `lambda`-th binary digit (1-based) of the normalized rank of `index`.
    pub fn digit(&self, index: usize, lambda: usize) -> u8 {
        rank_digit(self.ranks[index] as u64, self.ranks.len() as u64, lambda)
    }
}

/// floor((r + 1/2) / n * 2^λ) mod 2, in exact integer arithmetic.
#[inline]
fn rank_digit(rank: u64, n: u64, lambda: usize) -> u8 {
    let scaled = ((2 * rank + 1) as u128) << lambda;
    ((scaled / (2 * n) as u128) & 1) as u8
}

/// Ranks pixels by intensity, breaking ties by row-major index.
pub fn equalize(img: &GrayImage) -> RankField {
    // counting sort: intensities are 8-bit
    let mut counts = [0u32; 256];
    for &v in img.data() {
        counts[v as usize] += 1;
    }
    let mut next = [0u32; 256];
    let mut acc = 0u32;
    for (slot, &c) in next.iter_mut().zip(counts.iter()) {
        *slot = acc;
        acc += c;
    }
    let ranks = img
        .data()
        .iter()
        .map(|&v| {
            let r = next[v as usize];
            next[v as usize] += 1;
            r
        })
        .collect();
    RankField {
        width: img.width(),
        height: img.height(),
        ranks,
    }
}

/// Ordered bitplanes `B_1..B_Λ` of equal dimensions, most significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitplaneStack {
    planes: Vec<BinaryPlane>,
}

impl BitplaneStack {
    pub fn new(planes: Vec<BinaryPlane>) -> Result<Self> {
        check_depth(planes.len())?;
        let (w, h) = (planes[0].width(), planes[0].height());
        if planes.iter().any(|p| p.width() != w || p.height() != h) {
            return Err(Error::DimensionMismatch(
                "bitplanes in a stack must share dimensions".into(),
            ));
        }
        Ok(Self { planes })
    }

    pub fn depth(&self) -> usize {
        self.planes.len()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn planes(&self) -> &[BinaryPlane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<BinaryPlane> {
        self.planes
    }

    /// Plane `B_lambda`, 1-based.
    pub fn plane(&self, lambda: usize) -> Result<&BinaryPlane> {
        if lambda == 0 || lambda > self.planes.len() {
            return Err(Error::DepthExceeded {
                lambda,
                depth: self.planes.len(),
            });
        }
        Ok(&self.planes[lambda - 1])
    }

    pub fn crop(&self, border: usize) -> Result<Self> {
        let planes = self
            .planes
            .iter()
            .map(|p| p.crop(border))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { planes })
    }
}

fn check_depth(depth: usize) -> Result<()> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "bitplane depth {depth} outside 1..={MAX_DEPTH}"
        )));
    }
    Ok(())
}

/// Half-point thresholding of the equalized image: `B_λ = floor(u·2^λ) mod 2`.
pub fn decompose(rf: &RankField, depth: usize) -> Result<BitplaneStack> {
    check_depth(depth)?;
    let n = rf.len() as u64;
    let planes = (1..=depth)
        .map(|lambda| {
            let bits = rf
                .ranks
                .iter()
                .map(|&r| rank_digit(r as u64, n, lambda))
                .collect();
            BinaryPlane::from_bits_unchecked(rf.width, rf.height, bits)
        })
        .collect();
    Ok(BitplaneStack { planes })
}

pub fn decompose_image(img: &GrayImage, depth: usize) -> Result<BitplaneStack> {
    decompose(&equalize(img), depth)
}

/// Weighted sum `Σ 2^(Λ-λ) B_λ`, shifted left by `8 - Λ` to span [0, 255].
pub fn recompose(stack: &BitplaneStack) -> GrayImage {
    let mut data = vec![0u8; stack.width() * stack.height()];
    for (i, plane) in stack.planes.iter().enumerate() {
        let weight = 1u8 << (MAX_DEPTH - 1 - i);
        for (px, &b) in data.iter_mut().zip(plane.bits()) {
            *px |= weight * b;
        }
    }
    GrayImage::new(stack.width(), stack.height(), data).expect("stack dimensions are valid")
}

/// The 8-bit histogram-equalized image, `floor(u · 256)`.
pub fn equalized_image(img: &GrayImage) -> GrayImage {
    recompose(&decompose_image(img, MAX_DEPTH).expect("depth 8 is valid"))
}

/// Removal of a fixed border from every side.
pub trait Crop: Sized {
    fn crop_border(&self, border: usize) -> Result<Self>;
}

impl Crop for BinaryPlane {
    fn crop_border(&self, border: usize) -> Result<Self> {
        self.crop(border)
    }
}

impl Crop for BitplaneStack {
    fn crop_border(&self, border: usize) -> Result<Self> {
        self.crop(border)
    }
}

impl Crop for GrayImage {
    fn crop_border(&self, border: usize) -> Result<Self> {
        self.crop(border)
    }
}

pub fn crop<T: Crop>(item: &T, border: usize) -> Result<T> {
    item.crop_border(border)
}

/// `<stem>.b<λ>.pgm`
pub fn plane_path(stem: &Path, lambda: usize) -> PathBuf {
    let mut name = stem.as_os_str().to_owned();
    name.push(format!(".b{lambda}.pgm"));
    PathBuf::from(name)
}

/// Writes each plane as a {0,255} PGM named `<stem>.b<λ>.pgm`.
pub fn save_stack(stem: impl AsRef<Path>, stack: &BitplaneStack) -> Result<Vec<PathBuf>> {
    let stem = stem.as_ref();
    stack
        .planes
        .iter()
        .enumerate()
        .map(|(i, plane)| {
            let path = plane_path(stem, i + 1);
            write_pgm_file(&path, &plane_to_image(plane))?;
            Ok(path)
        })
        .collect()
}

pub fn load_stack(stem: impl AsRef<Path>, depth: usize) -> Result<BitplaneStack> {
    check_depth(depth)?;
    let stem = stem.as_ref();
    let planes = (1..=depth)
        .map(|lambda| image_to_plane(&read_pgm_file(plane_path(stem, lambda))?))
        .collect::<Result<Vec<_>>>()?;
    BitplaneStack::new(planes)
}
