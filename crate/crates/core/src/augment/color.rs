//! Photometric augmentations on RGB `3×H×W` images.

use crate::diffcore::{Op, Real, Tensor};
use crate::error::{Error, Result};

pub(crate) const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn rgb<T: Real>(x: &Tensor<T>) -> Result<usize> {
    let (c, h, w) = x.chw()?;
    if c != 3 {
        return Err(Error::contract(format!("color op needs 3 channels, got {c}")));
    }
    Ok(h * w)
}

fn gray<T: Real>(x: &[T], hw: usize) -> Vec<T> {
    let l = LUMA.map(T::lit);
    (0..hw)
        .map(|i| l[0] * x[i] + l[1] * x[hw + i] + l[2] * x[2 * hw + i])
        .collect()
}

fn out_like<T: Real>(x: &Tensor<T>, data: Vec<T>) -> Result<Tensor<T>> {
    Tensor::new(x.shape().to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Lerp {
    /// Toward per-pixel grayscale.
    Saturate,
    /// Toward the mean grayscale level.
    Contrast,
    /// Toward a 3×3 Gaussian blur.
    Sharpness,
}

/// `out = base + m·(x − base)` where `base` depends on the variant.
pub(crate) struct LerpOp {
    pub kind: Lerp,
}

const BLUR: [[f64; 3]; 3] = [
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
    [2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0],
    [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
];

/// 3×3 Gaussian blur with replicated borders, or its adjoint.
pub(crate) fn blur3<T: Real>(x: &[T], c: usize, h: usize, w: usize, adjoint: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..h {
            for xo in 0..w {
                for (ky, row) in BLUR.iter().enumerate() {
                    let sy = (y as isize + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                    for (kx, k) in row.iter().enumerate() {
                        let sx = (xo as isize + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                        let k = T::lit(*k);
                        if adjoint {
                            out[base + sy * w + sx] += k * x[base + y * w + xo];
                        } else {
                            out[base + y * w + xo] += k * x[base + sy * w + sx];
                        }
                    }
                }
            }
        }
    }
    out
}

impl LerpOp {
    fn base<T: Real>(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let hw = rgb(x)?;
        let d = x.data();
        Ok(match self.kind {
            Lerp::Saturate => gray(d, hw).repeat(3),
            Lerp::Contrast => {
                let mean = gray(d, hw).iter().map(|v| v.f64()).sum::<f64>() / hw as f64;
                vec![T::lit(mean); 3 * hw]
            }
            Lerp::Sharpness => {
                let (c, h, w) = x.chw()?;
                blur3(d, c, h, w, false)
            }
        })
    }
}

impl<T: Real> Op<T> for LerpOp {
    fn name(&self) -> &'static str {
        match self.kind {
            Lerp::Saturate => "saturate",
            Lerp::Contrast => "contrast",
            Lerp::Sharpness => "sharpness",
        }
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let m = x[1].item();
        let base = self.base(x[0])?;
        let data = x[0].data().iter().zip(&base).map(|(v, b)| *b + m * (*v - *b)).collect();
        out_like(x[0], data)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let m = x[1].item();
        let one = T::one();
        let (c, h, w) = x[0].chw().expect("checked in forward");
        let hw = h * w;
        if let Some(gm) = grads[1].as_mut() {
            let base = self.base(x[0]).expect("checked in forward");
            let s: f64 = x[0]
                .data()
                .iter()
                .zip(&base)
                .zip(g)
                .map(|((v, b), gi)| ((*v - *b) * *gi).f64())
                .sum();
            gm[0] += T::lit(s);
        }
        let Some(gx) = grads[0].as_mut() else { return };
        // Direct path: m·g. Base path: (1 − m)·baseᵀ(g).
        for (a, gi) in gx.iter_mut().zip(g) {
            *a += m * *gi;
        }
        let k = one - m;
        match self.kind {
            Lerp::Saturate => {
                for i in 0..hw {
                    let s = g[i] + g[hw + i] + g[2 * hw + i];
                    for (ci, l) in LUMA.iter().enumerate() {
                        gx[ci * hw + i] += k * T::lit(*l) * s;
                    }
                }
            }
            Lerp::Contrast => {
                let total: f64 = g.iter().map(|v| v.f64()).sum();
                let per = T::lit(total / hw as f64);
                for (ci, l) in LUMA.iter().enumerate() {
                    let d = k * T::lit(*l) * per;
                    gx[ci * hw..(ci + 1) * hw].iter_mut().for_each(|a| *a += d);
                }
            }
            Lerp::Sharpness => {
                let back = blur3(g, c, h, w, true);
                for (a, b) in gx.iter_mut().zip(back) {
                    *a += k * b;
                }
            }
        }
    }
}

/// `x + m`.
pub(crate) struct Brightness;

impl<T: Real> Op<T> for Brightness {
    fn name(&self) -> &'static str {
        "brightness"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let m = x[1].item();
        out_like(x[0], x[0].data().iter().map(|v| *v + m).collect())
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            gx.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
        }
        if let Some(gm) = grads[1].as_mut() {
            gm[0] += T::lit(g.iter().map(|v| v.f64()).sum());
        }
    }
}

pub(crate) const GAMMA_FLOOR: f64 = 1e-6;

/// `max(x, 1e-6)^m`.
pub(crate) struct Gamma;

impl<T: Real> Op<T> for Gamma {
    fn name(&self) -> &'static str {
        "gamma"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let m = x[1].item();
        let floor = T::lit(GAMMA_FLOOR);
        out_like(x[0], x[0].data().iter().map(|v| v.max(floor).powf(m)).collect())
    }
    fn vjp(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let m = x[1].item();
        let floor = T::lit(GAMMA_FLOOR);
        if let Some(gx) = grads[0].as_mut() {
            for ((a, v), gi) in gx.iter_mut().zip(x[0].data()).zip(g) {
                if *v > floor {
                    *a += *gi * m * v.powf(m - T::one());
                }
            }
        }
        if let Some(gm) = grads[1].as_mut() {
            let s: f64 = x[0]
                .data()
                .iter()
                .zip(y.data())
                .zip(g)
                .map(|((v, o), gi)| (*gi * *o * v.max(floor).ln()).f64())
                .sum();
            gm[0] += T::lit(s);
        }
    }
}

/// RGB → YIQ.
const YIQ: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [0.595_716, -0.274_453, -0.321_263],
    [0.211_456, -0.522_591, 0.311_135],
];

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn mat3_inv(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

/// Rotation by `theta` of the chroma (I, Q) plane, and its derivative.
fn hue_matrices(theta: f64) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let (s, c) = theta.sin_cos();
    let rot = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]];
    let drot = [[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]];
    let inv = mat3_inv(&YIQ);
    (
        mat3_mul(&inv, &mat3_mul(&rot, &YIQ)),
        mat3_mul(&inv, &mat3_mul(&drot, &YIQ)),
    )
}

/// Hue rotation in YIQ space by `m` radians.
pub(crate) struct Hue;

fn apply_mat3<T: Real>(m: &[[f64; 3]; 3], x: &[T], hw: usize, transpose: bool) -> Vec<T> {
    let m = m.map(|r| r.map(T::lit));
    let mut out = vec![T::zero(); 3 * hw];
    for i in 0..hw {
        let px = [x[i], x[hw + i], x[2 * hw + i]];
        for r in 0..3 {
            out[r * hw + i] = (0..3)
                .map(|k| if transpose { m[k][r] } else { m[r][k] } * px[k])
                .fold(T::zero(), |a, b| a + b);
        }
    }
    out
}

impl<T: Real> Op<T> for Hue {
    fn name(&self) -> &'static str {
        "hue"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let hw = rgb(x[0])?;
        let theta = x[1].item();
        if theta.is_zero() {
            return out_like(x[0], x[0].data().to_vec());
        }
        let (t, _) = hue_matrices(theta.f64());
        out_like(x[0], apply_mat3(&t, x[0].data(), hw, false))
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let hw = x[0].len() / 3;
        let (t, dt) = hue_matrices(x[1].item().f64());
        if let Some(gx) = grads[0].as_mut() {
            for (a, b) in gx.iter_mut().zip(apply_mat3(&t, g, hw, true)) {
                *a += b;
            }
        }
        if let Some(gm) = grads[1].as_mut() {
            let d = apply_mat3(&dt, x[0].data(), hw, false);
            gm[0] += T::lit(d.iter().zip(g).map(|(a, b)| (*a * *b).f64()).sum());
        }
    }
}

/// Per-channel affine stretch of `[min, max]` onto `[0, 1]`.
///
/// Channels with range below `1e-6` pass through unchanged. The gradient
/// flows through the first argmin/argmax (subgradient at ties).
pub(crate) struct AutoContrast;

const FLAT_RANGE: f64 = 1e-6;

fn extrema<T: Real>(p: &[T]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, v) in p.iter().enumerate() {
        if *v < p[lo] {
            lo = i;
        }
        if *v > p[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

impl<T: Real> Op<T> for AutoContrast {
    fn name(&self) -> &'static str {
        "autocontrast"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (_, h, w) = x[0].chw()?;
        let mut out = x[0].data().to_vec();
        for plane in out.chunks_mut(h * w) {
            let (lo, hi) = extrema(plane);
            let (lo, hi) = (plane[lo], plane[hi]);
            let r = hi - lo;
            if r.f64() < FLAT_RANGE {
                continue;
            }
            plane.iter_mut().for_each(|v| *v = (*v - lo) / r);
        }
        out_like(x[0], out)
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let Some(gx) = grads[0].as_mut() else { return };
        let hw = x[0].chw().map(|(_, h, w)| h * w).expect("checked in forward");
        for ((plane, gp), gxp) in x[0].data().chunks(hw).zip(g.chunks(hw)).zip(gx.chunks_mut(hw)) {
            let (ilo, ihi) = extrema(plane);
            let (lo, hi) = (plane[ilo], plane[ihi]);
            let r = hi - lo;
            if r.f64() < FLAT_RANGE {
                gxp.iter_mut().zip(gp).for_each(|(a, b)| *a += *b);
                continue;
            }
            let r2 = r * r;
            let mut d_lo = T::zero();
            let mut d_hi = T::zero();
            for ((a, v), gi) in gxp.iter_mut().zip(plane).zip(gp) {
                *a += *gi / r;
                d_lo += *gi * (*v - hi) / r2;
                d_hi -= *gi * (*v - lo) / r2;
            }
            gxp[ilo] += d_lo;
            gxp[ihi] += d_hi;
        }
    }
}

/// Per-channel 256-bin histogram equalization; straight-through gradient.
pub(crate) struct Equalize;

fn quantize<T: Real>(v: T) -> usize {
    (v.f64() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as usize
}

pub(crate) fn equalize_plane<T: Real>(plane: &[T]) -> Vec<T> {
    let mut hist = [0usize; 256];
    for v in plane {
        hist[quantize(*v)] += 1;
    }
    let n = plane.len();
    let first = hist.iter().position(|&c| c > 0).unwrap_or(0);
    let cdf_min = hist[first];
    if n == cdf_min {
        return plane.to_vec();
    }
    let mut lut = [0.0f64; 256];
    let mut acc = 0usize;
    for (b, c) in hist.iter().enumerate() {
        acc += c;
        lut[b] = (acc.saturating_sub(cdf_min)) as f64 / (n - cdf_min) as f64;
    }
    plane.iter().map(|v| T::lit(lut[quantize(*v)])).collect()
}

impl<T: Real> Op<T> for Equalize {
    fn name(&self) -> &'static str {
        "equalize"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (_, h, w) = x[0].chw()?;
        let data = x[0].data().chunks(h * w).flat_map(equalize_plane).collect();
        out_like(x[0], data)
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            gx.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
        }
    }
}

/// `1 − x`.
pub(crate) struct Invert;

impl<T: Real> Op<T> for Invert {
    fn name(&self) -> &'static str {
        "invert"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        out_like(x[0], x[0].data().iter().map(|v| T::one() - *v).collect())
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            gx.iter_mut().zip(g).for_each(|(a, b)| *a -= *b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yiq_inverse_round_trips() {
        let (t, _) = hue_matrices(0.0);
        for (i, row) in t.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equalize_flat_channel_is_identity() {
        let p = vec![0.4f32; 16];
        assert_eq!(equalize_plane(&p), p);
    }

    #[test]
    fn blur_adjoint_matches_transpose() {
        // <blur(a), b> == <a, blurᵀ(b)>
        let (c, h, w) = (1, 4, 5);
        let a: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.91).cos()).collect();
        let lhs: f64 = blur3(&a, c, h, w, false).iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(blur3(&b, c, h, w, true)).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
