//! Valid (no padding) cross-correlation of binary planes with real kernels.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image_io::BinaryPlane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvMethod {
    /// Pick the cheaper of the two by operation count.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Sum over parents of `Σ_ij kernel_k[i,j] · plane_k[r+i, c+j]` for every
/// position where the kernel fits, giving an `(H-L+1) × (W-L+1)` map.
pub fn correlate_valid(
    planes: &[&BinaryPlane],
    kernels: &[&[f64]],
    side: usize,
    method: ConvMethod,
) -> Result<(usize, usize, Vec<f64>)> {
    if planes.is_empty() || planes.len() != kernels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} planes for {} kernels",
            planes.len(),
            kernels.len()
        )));
    }
    let (w, h) = (planes[0].width(), planes[0].height());
    if planes.iter().any(|p| p.width() != w || p.height() != h) {
        return Err(Error::DimensionMismatch("parent planes differ in size".into()));
    }
    if kernels.iter().any(|k| k.len() != side * side) {
        return Err(Error::DimensionMismatch(format!(
            "kernels must have {} taps",
            side * side
        )));
    }
    if w < side || h < side {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} parent is smaller than the {side}x{side} kernel"
        )));
    }
    let (oh, ow) = (h - side + 1, w - side + 1);
    let method = match method {
        ConvMethod::Auto => {
            let p = planes.len() as f64;
            let direct = p * (side * side) as f64 * (oh * ow) as f64;
            let n = (fast_len(h) * fast_len(w)) as f64;
            // one packed forward transform per parent plus one inverse
            let fft = (p + 1.0) * 5.0 * n * n.log2();
            if fft < direct {
                ConvMethod::Fft
            } else {
                ConvMethod::Direct
            }
        }
        m => m,
    };
    let out = match method {
        ConvMethod::Fft => fft_correlate(planes, kernels, side, oh, ow),
        _ => direct_correlate(planes, kernels, side, oh, ow),
    };
    Ok((oh, ow, out))
}

fn direct_correlate(
    planes: &[&BinaryPlane],
    kernels: &[&[f64]],
    side: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let w = planes[0].width();
    let as_f64: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| p.bits().iter().map(|&b| b as f64).collect())
        .collect();
    let mut out = vec![0.0; oh * ow];
    out.par_chunks_mut(ow).enumerate().for_each(|(r, out_row)| {
        for (plane, kernel) in as_f64.iter().zip(kernels) {
            for i in 0..side {
                let row = &plane[(r + i) * w..(r + i + 1) * w];
                for j in 0..side {
                    let wt = kernel[i * side + j];
                    if wt == 0.0 {
                        continue;
                    }
                    for (o, &x) in out_row.iter_mut().zip(&row[j..j + ow]) {
                        *o += wt * x;
                    }
                }
            }
        }
    });
    out
}

/// Smallest `m >= n` whose only prime factors are 2, 3, 5 and 7.
fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct Fft2 {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
    h: usize,
    w: usize,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows: planner.plan_fft_forward(w),
            cols: planner.plan_fft_forward(h),
            rows_inv: planner.plan_fft_inverse(w),
            cols_inv: planner.plan_fft_inverse(h),
            h,
            w,
        }
    }

    /// Forward transform of `grid` (h×w) whose rows from `live_rows` on are
    /// zero; the spectrum is left in transposed (w×h) layout in `out`.
    fn forward(&self, grid: &mut [Complex<f64>], live_rows: usize, out: &mut [Complex<f64>]) {
        run_rows(&*self.rows, &mut grid[..live_rows * self.w], self.w);
        transpose::transpose(grid, out, self.w, self.h);
        run_rows(&*self.cols, out, self.h);
    }

    /// Inverse of [`Fft2::forward`], unnormalized; result lands in `out` (h×w).
    /// Only the first `keep_rows` output rows are transformed back.
    fn inverse(&self, spectrum: &mut [Complex<f64>], keep_rows: usize, out: &mut [Complex<f64>]) {
        run_rows(&*self.cols_inv, spectrum, self.h);
        transpose::transpose(spectrum, out, self.h, self.w);
        run_rows(&*self.rows_inv, &mut out[..keep_rows * self.w], self.w);
    }
}

fn run_rows(fft: &dyn Fft<f64>, data: &mut [Complex<f64>], len: usize) {
    let scratch_len = fft.get_inplace_scratch_len();
    data.par_chunks_mut(len).for_each_init(
        || vec![Complex::new(0.0, 0.0); scratch_len],
        |scratch, row| fft.process_with_scratch(row, scratch),
    );
}

fn fft_correlate(
    planes: &[&BinaryPlane],
    kernels: &[&[f64]],
    side: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let (w, h) = (planes[0].width(), planes[0].height());
    // circular correlation on a grid at least as large as the plane: valid
    // outputs never wrap, so padding only needs to reach a fast length
    let (ph, pw) = (fast_len(h), fast_len(w));
    let n = ph * pw;
    let fft = Fft2::new(ph, pw);
    let zero = Complex::new(0.0, 0.0);
    let mut acc = vec![zero; n];
    let mut grid = vec![zero; n];
    let mut spectrum = vec![zero; n];

    for (plane, kernel) in planes.iter().zip(kernels) {
        // plane in the real part, kernel in the imaginary part
        grid.fill(zero);
        for (r, bits) in plane.bits().chunks(w).enumerate() {
            for (g, &b) in grid[r * pw..r * pw + w].iter_mut().zip(bits) {
                g.re = b as f64;
            }
        }
        for i in 0..side {
            for j in 0..side {
                grid[i * pw + j].im = kernel[i * side + j];
            }
        }
        fft.forward(&mut grid, h, &mut spectrum);

        // X = (Z + conj Z⁻)/2, K = (Z - conj Z⁻)/2i, so
        // X conj(K) = (Z + conj Z⁻)(conj Z - Z⁻) / (-4i)
        let spectrum = &spectrum;
        acc.par_chunks_mut(ph).enumerate().for_each(|(c, row)| {
            let mirror = &spectrum[((pw - c) % pw) * ph..][..ph];
            let own = &spectrum[c * ph..][..ph];
            for (r, a) in row.iter_mut().enumerate() {
                let z = own[r];
                let zm = mirror[(ph - r) % ph];
                let prod = (z + zm.conj()) * (z.conj() - zm);
                // divide by -4i: (x + iy) / (-4i) = (-y + ix) / 4
                *a += Complex::new(-prod.im, prod.re) * 0.25;
            }
        });
    }
    fft.inverse(&mut acc, oh, &mut grid);
    let scale = 1.0 / n as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        out.extend(grid[r * pw..r * pw + ow].iter().map(|c| c.re * scale));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, rng: &mut ChaCha8Rng) -> BinaryPlane {
        BinaryPlane::new(w, h, (0..w * h).map(|_| rng.gen_range(0..2u8)).collect()).unwrap()
    }

    fn naive(planes: &[&BinaryPlane], kernels: &[&[f64]], side: usize) -> Vec<f64> {
        let (w, h) = (planes[0].width(), planes[0].height());
        let mut out = Vec::new();
        for r in 0..=h - side {
            for c in 0..=w - side {
                let mut s = 0.0;
                for (p, k) in planes.iter().zip(kernels) {
                    for i in 0..side {
                        for j in 0..side {
                            s += k[i * side + j] * p.get(r + i, c + j) as f64;
                        }
                    }
                }
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn both_methods_match_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(w, h, side, parents) in &[(9, 9, 3, 1), (13, 10, 5, 3), (7, 11, 7, 2), (6, 6, 1, 1)] {
            let planes: Vec<BinaryPlane> = (0..parents).map(|_| random_plane(w, h, &mut rng)).collect();
            let kernels: Vec<Vec<f64>> = (0..parents)
                .map(|_| (0..side * side).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let pr: Vec<&BinaryPlane> = planes.iter().collect();
            let kr: Vec<&[f64]> = kernels.iter().map(|k| k.as_slice()).collect();
            let expected = naive(&pr, &kr, side);
            for method in [ConvMethod::Direct, ConvMethod::Fft, ConvMethod::Auto] {
                let (oh, ow, got) = correlate_valid(&pr, &kr, side, method).unwrap();
                assert_eq!((oh, ow), (h - side + 1, w - side + 1));
                for (a, b) in got.iter().zip(&expected) {
                    assert!((a - b).abs() < 1e-11, "{method:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_small_parents() {
        let p = BinaryPlane::zeros(4, 4).unwrap();
        let k = vec![0.0; 25];
        assert!(correlate_valid(&[&p], &[&k], 5, ConvMethod::Auto).is_err());
    }
}
