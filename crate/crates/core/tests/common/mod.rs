//! Independent reference implementations used by the integration and
//! acceptance tests. None of these call into the code paths they check.
#![allow(dead_code)]

use std::path::PathBuf;

use bitplane::{BinaryPlane, GrayImage, PatchBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(width: usize, height: usize, levels: &[u8], rng: &mut ChaCha8Rng) -> GrayImage {
    let data = (0..width * height)
        .map(|_| levels[rng.gen_range(0..levels.len())])
        .collect();
    GrayImage::new(width, height, data).unwrap()
}

pub fn random_plane(width: usize, height: usize, rng: &mut ChaCha8Rng) -> BinaryPlane {
    BinaryPlane::new(width, height, (0..width * height).map(|_| rng.gen_range(0..2u8)).collect())
        .unwrap()
}

pub fn random_batch(lambda: usize, side: usize, m: usize, rng: &mut ChaCha8Rng) -> PatchBatch {
    let n = (lambda - 1) * side * side;
    let features = (0..m * n).map(|_| rng.gen_range(0..2u8)).collect();
    let labels = (0..m).map(|_| rng.gen_range(0..2u8)).collect();
    PatchBatch::new(lambda, side, features, labels).unwrap()
}

/// Position of each pixel in the (intensity, index) order, by pairwise comparison.
pub fn brute_ranks(img: &GrayImage) -> Vec<usize> {
    let d = img.data();
    (0..d.len())
        .map(|p| (0..d.len()).filter(|&q| (d[q], q) < (d[p], p)).count())
        .collect()
}

/// Hierarchical median thresholding by recursive set splitting.
///
/// Each pixel carries its quantile position `(rank + 1/2) / N` as an exact
/// fraction. A set occupying the quantile interval `[lo, hi)` is split at the
/// interval median `(lo + hi) / 2`: members below go to the lower child (bit
/// 0), the rest to the upper child (bit 1). Recursion continues to `depth`
/// levels.
pub fn median_split_oracle(img: &GrayImage, depth: usize) -> Vec<Vec<u8>> {
    let n = img.len() as u128;
    let ranks = brute_ranks(img);
    let mut planes = vec![vec![0u8; img.len()]; depth];
    // quantile of pixel p is (2r+1) / (2n); interval bounds are k / 2^level
    fn recurse(
        members: Vec<usize>,
        lo_num: u128,
        level: usize,
        depth: usize,
        ranks: &[usize],
        n: u128,
        planes: &mut [Vec<u8>],
    ) {
        if level == depth || members.is_empty() {
            return;
        }
        // interval [lo_num / 2^level, (lo_num + 1) / 2^level); midpoint (2 lo_num + 1) / 2^(level+1)
        let mid_num = 2 * lo_num + 1;
        let (mut lower, mut upper) = (Vec::new(), Vec::new());
        for p in members {
            // (2r+1)/(2n) < mid_num / 2^(level+1)  <=>  (2r+1) 2^(level+1) < 2 n mid_num
            let lhs = (2 * ranks[p] as u128 + 1) << (level + 1);
            if lhs < 2 * n * mid_num {
                lower.push(p);
            } else {
                planes[level][p] = 1;
                upper.push(p);
            }
        }
        recurse(lower, 2 * lo_num, level + 1, depth, ranks, n, planes);
        recurse(upper, 2 * lo_num + 1, level + 1, depth, ranks, n, planes);
    }
    recurse((0..img.len()).collect(), 0, 0, depth, &ranks, n, &mut planes);
    planes
}

/// Recursive halving by count: sort, split each group into equal lower and
/// upper halves. Exact median thresholding when `N` is divisible by `2^depth`.
pub fn halving_oracle(img: &GrayImage, depth: usize) -> Vec<Vec<u8>> {
    assert_eq!(img.len() % (1 << depth), 0);
    let d = img.data();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by_key(|&p| (d[p], p));
    let mut planes = vec![vec![0u8; d.len()]; depth];
    let mut groups = vec![order];
    for plane in planes.iter_mut() {
        let mut next = Vec::new();
        for g in groups {
            let (lo, hi) = g.split_at(g.len() / 2);
            for &p in hi {
                plane[p] = 1;
            }
            next.push(lo.to_vec());
            next.push(hi.to_vec());
        }
        groups = next;
    }
    planes
}

/// Cluster sizes of 4-connected ones by depth-first flood fill, sorted.
pub fn flood_fill_sizes(plane: &BinaryPlane) -> Vec<usize> {
    let (w, h) = (plane.width(), plane.height());
    let mut seen = vec![false; w * h];
    let mut sizes = Vec::new();
    for start in 0..w * h {
        if plane.bits()[start] == 0 || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if plane.bits()[q] == 1 && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }
    sizes.sort_unstable();
    sizes
}

/// Regularized objective evaluated by a plain per-sample loop.
pub fn scalar_objective(params: &[f64], batch: &PatchBatch, rho: f64) -> f64 {
    let n = params.len() - 1;
    let m = batch.len() as f64;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (x, y) = batch.sample(i);
        let mut z = params[n];
        for j in 0..n {
            z += params[j] * x[j] as f64;
        }
        let a = 1.0 / (1.0 + (-z).exp());
        total -= if y == 1 { a.ln() } else { (1.0 - a).ln() };
    }
    let ridge: f64 = params[..n].iter().map(|w| w * w).sum();
    total / m + 0.5 * rho * ridge / m
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `‖a - b‖∞ / ‖b‖∞`
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    max_abs(&diff) / max_abs(b)
}

pub fn photo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/photos")
}

pub fn photo_paths() -> Vec<PathBuf> {
    pgm_files(&photo_dir())
}

pub fn pgm_files(dir: &std::path::Path) -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    paths.sort();
    paths
}

/// Three-sigma half-width of a binomial proportion.
pub fn three_sigma(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}
