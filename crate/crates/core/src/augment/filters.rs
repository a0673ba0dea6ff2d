//! Ideal low-/high-pass masks in 2-D Fourier space.
//!
//! Radii are normalized so that the Nyquist corner sits at 1.0. A frequency
//! `(fy, fx)` (signed, in cycles per image) has normalized radius
//! `r = sqrt(2·((fy/H)² + (fx/W)²))`, and is assigned to band `j` = the
//! smallest integer with `r ≤ j/20`. `LowPass(j/20)` keeps bands `0..=j`,
//! `HighPass(j/20)` keeps the rest. Membership is decided in exact integer
//! arithmetic, so the two masks of a cutoff partition the spectrum.

use rustfft::num_complex::Complex;

use crate::diffcore::{Op, Real, Tensor};
use crate::error::{Error, Result};

/// Number of cutoff steps: cutoffs are `j / STEPS` for `j` in `1..STEPS`.
pub(crate) const STEPS: u8 = 20;

/// Above this many requested outputs the band decomposition is cheaper
/// than filtering each output separately.
const DIRECT_LIMIT: usize = STEPS as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Sel {
    pub high: bool,
    pub step: u8,
}

impl Sel {
    fn keeps(self, band: u8) -> bool {
        (band <= self.step) != self.high
    }
}

fn signed(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Band index per frequency, in the transposed spectrum layout `[fx][fy]`.
pub(crate) fn band_map(h: usize, w: usize) -> Vec<u8> {
    let (h2, w2) = ((h * h) as u128, (w * w) as u128);
    let mut out = Vec::with_capacity(h * w);
    for fx in 0..w {
        let fx = signed(fx, w).unsigned_abs() as u128;
        for fy in 0..h {
            let fy = signed(fy, h).unsigned_abs() as u128;
            let q = 2 * (fy * fy * w2 + fx * fx * h2) * (STEPS as u128).pow(2);
            let mut j = 0u8;
            while q > (j as u128).pow(2) * h2 * w2 {
                j += 1;
            }
            out.push(j);
        }
    }
    out
}

/// Forward 2-D FFT of a real plane; result is transposed, `[fx][fy]`.
fn fft2<T: Real>(plane: &[T], h: usize, w: usize) -> Vec<Complex<T>> {
    let mut rows: Vec<Complex<T>> = plane.iter().map(|v| Complex::new(*v, T::zero())).collect();
    T::fft_plan(w, false).process(&mut rows);
    let mut cols = transpose(&rows, h, w);
    T::fft_plan(h, false).process(&mut cols);
    cols
}

/// Inverse of [`fft2`], returning the real part (scaled by `1/(HW)`).
fn ifft2<T: Real>(mut spec: Vec<Complex<T>>, h: usize, w: usize) -> Vec<T> {
    T::fft_plan(h, true).process(&mut spec);
    let mut rows = transpose(&spec, w, h);
    T::fft_plan(w, true).process(&mut rows);
    let scale = T::one() / T::lit((h * w) as f64);
    rows.into_iter().map(|c| c.re * scale).collect()
}

fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(src[r * cols + c]);
        }
    }
    out
}

fn masked<T: Real>(spec: &[Complex<T>], bands: &[u8], keep: impl Fn(u8) -> bool) -> Vec<Complex<T>> {
    spec.iter()
        .zip(bands)
        .map(|(c, b)| {
            if keep(*b) {
                *c
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
        .collect()
}

/// Applies every selection in `sels` to one plane.
fn filter_plane<T: Real>(plane: &[T], h: usize, w: usize, bands: &[u8], sels: &[Sel]) -> Vec<Vec<T>> {
    let spec = fft2(plane, h, w);
    if sels.len() <= DIRECT_LIMIT {
        return sels
            .iter()
            .map(|s| ifft2(masked(&spec, bands, |b| s.keeps(b)), h, w))
            .collect();
    }
    // One inverse transform per band, then prefix/suffix sums.
    let parts: Vec<Vec<T>> = (0..=STEPS)
        .map(|j| ifft2(masked(&spec, bands, |b| b == j), h, w))
        .collect();
    let mut low = vec![vec![T::zero(); h * w]; STEPS as usize + 1];
    let mut acc = vec![T::zero(); h * w];
    for (j, p) in parts.iter().enumerate() {
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += *v);
        low[j].clone_from(&acc);
    }
    let mut high = vec![vec![T::zero(); h * w]; STEPS as usize + 1];
    let mut acc = vec![T::zero(); h * w];
    for j in (0..STEPS as usize).rev() {
        acc.iter_mut().zip(&parts[j + 1]).for_each(|(a, v)| *a += *v);
        high[j].clone_from(&acc);
    }
    sels.iter()
        .map(|s| {
            if s.high {
                high[s.step as usize].clone()
            } else {
                low[s.step as usize].clone()
            }
        })
        .collect()
}

/// Adjoint of [`filter_plane`]: `Σ_f filter_f(g_f)`.
fn filter_plane_adjoint<T: Real>(g: &[&[T]], h: usize, w: usize, bands: &[u8], sels: &[Sel]) -> Vec<T> {
    let zero = Complex::new(T::zero(), T::zero());
    let mut total = vec![zero; h * w];
    if sels.len() <= DIRECT_LIMIT {
        for (gf, s) in g.iter().zip(sels) {
            let spec = fft2(gf, h, w);
            for ((t, c), b) in total.iter_mut().zip(spec).zip(bands) {
                if s.keeps(*b) {
                    *t = *t + c;
                }
            }
        }
    } else {
        // Band b collects every output whose mask contains it.
        let n = STEPS as usize + 1;
        let mut by_low = vec![vec![T::zero(); h * w]; n];
        let mut by_high = vec![vec![T::zero(); h * w]; n];
        for (gf, s) in g.iter().zip(sels) {
            let dst = if s.high { &mut by_high } else { &mut by_low };
            dst[s.step as usize]
                .iter_mut()
                .zip(gf.iter())
                .for_each(|(a, v)| *a += *v);
        }
        let mut low_suffix = vec![T::zero(); h * w];
        let mut per_band = vec![vec![T::zero(); h * w]; n];
        for b in (0..n).rev() {
            low_suffix.iter_mut().zip(&by_low[b]).for_each(|(a, v)| *a += *v);
            per_band[b].clone_from(&low_suffix);
        }
        let mut high_prefix = vec![T::zero(); h * w];
        for b in 1..n {
            high_prefix.iter_mut().zip(&by_high[b - 1]).for_each(|(a, v)| *a += *v);
            per_band[b].iter_mut().zip(&high_prefix).for_each(|(a, v)| *a += *v);
        }
        for (b, hb) in per_band.iter().enumerate() {
            if hb.iter().all(|v| v.is_zero()) {
                continue;
            }
            let spec = fft2(hb, h, w);
            for ((t, c), band) in total.iter_mut().zip(spec).zip(bands) {
                if *band as usize == b {
                    *t = *t + c;
                }
            }
        }
    }
    ifft2(total, h, w)
}

/// Outputs `[F, C, H, W]`: one filtered copy of a `[C, H, W]` input per
/// selection. No clamping.
pub(crate) struct FilterBank {
    pub sels: Vec<Sel>,
}

impl<T: Real> Op<T> for FilterBank {
    fn name(&self) -> &'static str {
        "filter"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (c, h, w) = x[0].chw()?;
        if self.sels.is_empty() {
            return Err(Error::contract("filter bank with no outputs"));
        }
        let bands = band_map(h, w);
        let f = self.sels.len();
        let mut out = vec![T::zero(); f * c * h * w];
        for (ci, plane) in x[0].data().chunks(h * w).enumerate() {
            for (fi, res) in filter_plane(plane, h, w, &bands, &self.sels).into_iter().enumerate() {
                let at = (fi * c + ci) * h * w;
                out[at..at + h * w].copy_from_slice(&res);
            }
        }
        Tensor::new(vec![f, c, h, w], out)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        let (c, h, w) = x[0].chw().expect("checked in forward");
        let bands = band_map(h, w);
        for ci in 0..c {
            let parts: Vec<&[T]> = (0..self.sels.len())
                .map(|fi| &g[(fi * c + ci) * h * w..(fi * c + ci + 1) * h * w])
                .collect();
            let back = filter_plane_adjoint(&parts, h, w, &bands, &self.sels);
            gx[ci * h * w..(ci + 1) * h * w]
                .iter_mut()
                .zip(back)
                .for_each(|(a, v)| *a += v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_round_trip() {
        let (h, w) = (6, 8);
        let x: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = ifft2(fft2(&x, h, w), h, w);
        for (a, b) in x.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn band_map_extremes() {
        let b = band_map(32, 32);
        assert_eq!(b[0], 0);
        // Nyquist corner is exactly radius 1.
        assert_eq!(b[16 * 32 + 16], STEPS);
        assert!(b.iter().all(|&j| j <= STEPS));
    }

    #[test]
    fn band_and_direct_paths_agree() {
        let (h, w) = (8, 8);
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 37 % 11) as f64) / 11.0).collect();
        let bands = band_map(h, w);
        let many: Vec<Sel> = (1..STEPS)
            .flat_map(|s| [Sel { high: false, step: s }, Sel { high: true, step: s }])
            .collect();
        let banded = filter_plane(&x, h, w, &bands, &many);
        for (sel, got) in many.iter().zip(&banded) {
            let direct = filter_plane(&x, h, w, &bands, &[*sel]).remove(0);
            for (a, b) in got.iter().zip(direct) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let gs: Vec<Vec<f64>> = (0..many.len())
            .map(|k| (0..h * w).map(|i| ((i + 3 * k) as f64 * 0.13).cos()).collect())
            .collect();
        let refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
        let fast = filter_plane_adjoint(&refs, h, w, &bands, &many);
        let mut slow = vec![0.0; h * w];
        for (gf, s) in refs.iter().zip(&many) {
            let part = filter_plane_adjoint(&[*gf], h, w, &bands, &[*s]);
            slow.iter_mut().zip(part).for_each(|(a, v)| *a += v);
        }
        for (a, b) in fast.iter().zip(slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
