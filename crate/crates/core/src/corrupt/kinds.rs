//! Corruption operators with five severity levels.

use std::f32::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::imgops::{clamp01, convolve, gaussian_blur, lerp_gray, map, warp, Fill};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    ZoomBlur,
    Fog,
    BrightnessShift,
    ContrastShift,
    Elastic,
    Pixelate,
    JpegLike,
    SpeckleNoise,
    GaussianBlur,
    Spatter,
    SaturateShift,
}

pub const SEEN: [CorruptionKind; 12] = [
    CorruptionKind::GaussianNoise,
    CorruptionKind::ShotNoise,
    CorruptionKind::ImpulseNoise,
    CorruptionKind::DefocusBlur,
    CorruptionKind::MotionBlur,
    CorruptionKind::ZoomBlur,
    CorruptionKind::Fog,
    CorruptionKind::BrightnessShift,
    CorruptionKind::ContrastShift,
    CorruptionKind::Elastic,
    CorruptionKind::Pixelate,
    CorruptionKind::JpegLike,
];

pub const UNSEEN: [CorruptionKind; 4] = [
    CorruptionKind::SpeckleNoise,
    CorruptionKind::GaussianBlur,
    CorruptionKind::Spatter,
    CorruptionKind::SaturateShift,
];

pub const SEVERITIES: std::ops::RangeInclusive<u8> = 1..=5;

/// Noise standard deviation of `GaussianNoise` per severity.
pub const GAUSSIAN_SIGMA: [f32; 5] = [0.04, 0.06, 0.08, 0.12, 0.18];
const SHOT_RATE: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
const IMPULSE_PROB: [f64; 5] = [0.03, 0.06, 0.09, 0.17, 0.27];
const DEFOCUS_RADIUS: [f32; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
const MOTION_LENGTH: [usize; 5] = [3, 5, 7, 9, 11];
const ZOOM_MAX: [f32; 5] = [1.06, 1.11, 1.16, 1.21, 1.26];
const FOG_AMOUNT: [f32; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];
const BRIGHTNESS_SHIFT: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const CONTRAST_KEEP: [f32; 5] = [0.4, 0.3, 0.2, 0.1, 0.05];
const ELASTIC_AMPLITUDE: [f32; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
const PIXELATE_FACTOR: [f32; 5] = [0.6, 0.5, 0.4, 0.3, 0.25];
const JPEG_STEP: [f32; 5] = [0.02, 0.04, 0.06, 0.1, 0.15];
const SPECKLE_SIGMA: [f32; 5] = [0.15, 0.2, 0.35, 0.45, 0.6];
const BLUR_SIGMA: [f32; 5] = [0.6, 0.9, 1.2, 1.6, 2.0];
const SPATTER_COUNT: [usize; 5] = [3, 5, 7, 9, 12];
const SPATTER_ALPHA: [f32; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
const SATURATE_KEEP: [f32; 5] = [0.6, 0.4, 0.25, 0.12, 0.05];

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 16] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Fog,
        CorruptionKind::BrightnessShift,
        CorruptionKind::ContrastShift,
        CorruptionKind::Elastic,
        CorruptionKind::Pixelate,
        CorruptionKind::JpegLike,
        CorruptionKind::SpeckleNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Spatter,
        CorruptionKind::SaturateShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::ShotNoise => "shot-noise",
            CorruptionKind::ImpulseNoise => "impulse-noise",
            CorruptionKind::DefocusBlur => "defocus-blur",
            CorruptionKind::MotionBlur => "motion-blur",
            CorruptionKind::ZoomBlur => "zoom-blur",
            CorruptionKind::Fog => "fog",
            CorruptionKind::BrightnessShift => "brightness",
            CorruptionKind::ContrastShift => "contrast",
            CorruptionKind::Elastic => "elastic",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::JpegLike => "jpeg",
            CorruptionKind::SpeckleNoise => "speckle-noise",
            CorruptionKind::GaussianBlur => "gaussian-blur",
            CorruptionKind::Spatter => "spatter",
            CorruptionKind::SaturateShift => "saturate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown corruption `{s}`")))
    }

    pub fn is_seen(self) -> bool {
        SEEN.contains(&self)
    }

    fn index(self) -> u64 {
        CorruptionKind::ALL.iter().position(|k| *k == self).expect("listed") as u64
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Applies `kind` at `severity` (1..=5; 0 is the identity).
///
/// Deterministic in `(image, kind, severity, seed)`.
pub fn corrupt(image: &Tensor, kind: CorruptionKind, severity: u8, seed: u64) -> Result<Tensor> {
    image.chw()?;
    if severity > 5 {
        return Err(Error::invalid(format!("severity {severity} outside 1..=5")));
    }
    if severity == 0 {
        return Ok(image.clone());
    }
    let s = severity as usize - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind.index() * 8 + severity as u64);
    let out = match kind {
        CorruptionKind::GaussianNoise => additive_noise(image, &mut rng, GAUSSIAN_SIGMA[s], false),
        CorruptionKind::SpeckleNoise => additive_noise(image, &mut rng, SPECKLE_SIGMA[s], true),
        CorruptionKind::ShotNoise => {
            let rate = SHOT_RATE[s];
            map(image, |v| {
                let lambda = v as f64 * rate;
                if lambda <= 0.0 {
                    0.0
                } else {
                    let p = Poisson::new(lambda).expect("positive rate");
                    (p.sample(&mut rng) / rate) as f32
                }
            })
        }
        CorruptionKind::ImpulseNoise => {
            let p = IMPULSE_PROB[s];
            map(image, |v| {
                if rng.random_bool(p) {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
        }
        CorruptionKind::DefocusBlur => {
            let (k, n) = disk_kernel(DEFOCUS_RADIUS[s]);
            convolve(image, &k, n, n)
        }
        CorruptionKind::MotionBlur => {
            let (k, n) = motion_kernel(MOTION_LENGTH[s], rng.random_range(0.0..PI));
            convolve(image, &k, n, n)
        }
        CorruptionKind::ZoomBlur => zoom_blur(image, ZOOM_MAX[s]),
        CorruptionKind::Fog => fog(image, &mut rng, FOG_AMOUNT[s]),
        CorruptionKind::BrightnessShift => map(image, |v| v + BRIGHTNESS_SHIFT[s]),
        CorruptionKind::ContrastShift => {
            let mean = image.data().iter().sum::<f32>() / image.len() as f32;
            map(image, |v| mean + CONTRAST_KEEP[s] * (v - mean))
        }
        CorruptionKind::Elastic => elastic(image, &mut rng, ELASTIC_AMPLITUDE[s]),
        CorruptionKind::Pixelate => pixelate(image, PIXELATE_FACTOR[s]),
        CorruptionKind::JpegLike => jpeg_like(image, JPEG_STEP[s]),
        CorruptionKind::GaussianBlur => gaussian_blur(image, BLUR_SIGMA[s]),
        CorruptionKind::Spatter => spatter(image, &mut rng, SPATTER_COUNT[s], SPATTER_ALPHA[s]),
        CorruptionKind::SaturateShift => lerp_gray(image, SATURATE_KEEP[s]),
    };
    Ok(clamp01(out))
}

fn additive_noise(image: &Tensor, rng: &mut ChaCha8Rng, sigma: f32, multiplicative: bool) -> Tensor {
    let n = Normal::new(0.0f32, sigma).expect("positive sigma");
    map(image, |v| {
        let e = n.sample(rng);
        if multiplicative {
            v + v * e
        } else {
            v + e
        }
    })
}

fn disk_kernel(radius: f32) -> (Vec<f32>, usize) {
    let r = radius.ceil() as isize;
    let n = (2 * r + 1) as usize;
    let mut k = vec![0.0; n * n];
    // 4×4 supersampled disk coverage.
    for y in -r..=r {
        for x in -r..=r {
            let mut cover = 0.0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let px = x as f32 + (sx as f32 + 0.5) / 4.0 - 0.5;
                    let py = y as f32 + (sy as f32 + 0.5) / 4.0 - 0.5;
                    if px * px + py * py <= radius * radius {
                        cover += 1.0 / 16.0;
                    }
                }
            }
            k[((y + r) * n as isize + x + r) as usize] = cover;
        }
    }
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    (k, n)
}

fn motion_kernel(length: usize, angle: f32) -> (Vec<f32>, usize) {
    let n = length;
    let c = (n / 2) as f32;
    let mut k = vec![0.0; n * n];
    let steps = 4 * n;
    let half = (n as f32 - 1.0) / 2.0;
    for i in 0..steps {
        let t = -1.0 + 2.0 * i as f32 / (steps - 1) as f32;
        let x = (c + t * half * angle.cos()).round() as usize;
        let y = (c + t * half * angle.sin()).round() as usize;
        k[y.min(n - 1) * n + x.min(n - 1)] += 1.0;
    }
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    (k, n)
}

fn zoom_blur(image: &Tensor, zmax: f32) -> Tensor {
    let (_, h, w) = image.chw().expect("image");
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let steps = 6;
    let mut acc = image.data().to_vec();
    for i in 1..=steps {
        let z = 1.0 + (zmax - 1.0) * i as f32 / steps as f32;
        let zoomed = warp(image, Fill::Edge, |x, y| (cx + (x - cx) / z, cy + (y - cy) / z));
        acc.iter_mut().zip(zoomed.data()).for_each(|(a, v)| *a += v);
    }
    let n = (steps + 1) as f32;
    Tensor::new(image.shape().to_vec(), acc.into_iter().map(|v| v / n).collect()).expect("shape")
}

/// Smooth random field in `[0, 1]` built from two octaves of upsampled grids.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; h * w];
    for (g, amp) in [(4usize, 1.0f32), (8, 0.5)] {
        let grid: Vec<f32> = (0..g * g).map(|_| rng.random_range(0.0..1.0)).collect();
        for y in 0..h {
            for x in 0..w {
                let gx = x as f32 / (w - 1) as f32 * (g - 1) as f32;
                let gy = y as f32 / (h - 1) as f32 * (g - 1) as f32;
                let (x0, y0) = ((gx as usize).min(g - 2), (gy as usize).min(g - 2));
                let (fx, fy) = (gx - x0 as f32, gy - y0 as f32);
                let v = (1.0 - fy) * ((1.0 - fx) * grid[y0 * g + x0] + fx * grid[y0 * g + x0 + 1])
                    + fy * ((1.0 - fx) * grid[(y0 + 1) * g + x0] + fx * grid[(y0 + 1) * g + x0 + 1]);
                out[y * w + x] += amp * v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= 1.5);
    out
}

fn fog(image: &Tensor, rng: &mut ChaCha8Rng, amount: f32) -> Tensor {
    let (c, h, w) = image.chw().expect("image");
    let haze = smooth_field(rng, h, w);
    let max = image.data().iter().copied().fold(0.0f32, f32::max);
    let norm = max / (max + amount);
    let mut out = image.data().to_vec();
    for ci in 0..c {
        for (i, v) in out[ci * h * w..(ci + 1) * h * w].iter_mut().enumerate() {
            *v = (*v + amount * haze[i]) * norm;
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("shape")
}

fn elastic(image: &Tensor, rng: &mut ChaCha8Rng, amplitude: f32) -> Tensor {
    let (_, h, w) = image.chw().expect("image");
    let dx = smooth_field(rng, h, w);
    let dy = smooth_field(rng, h, w);
    warp(image, Fill::Edge, |x, y| {
        let i = y as usize * w + x as usize;
        (x + amplitude * (2.0 * dx[i] - 1.0), y + amplitude * (2.0 * dy[i] - 1.0))
    })
}

fn pixelate(image: &Tensor, factor: f32) -> Tensor {
    let (c, h, w) = image.chw().expect("image");
    let sh = ((h as f32 * factor).round() as usize).max(1);
    let sw = ((w as f32 * factor).round() as usize).max(1);
    let cell = |p: usize, small: usize, big: usize| (p * small / big).min(small - 1);
    let mut sums = vec![0.0f32; c * sh * sw];
    let mut counts = vec![0usize; sh * sw];
    for y in 0..h {
        for x in 0..w {
            let j = cell(y, sh, h) * sw + cell(x, sw, w);
            counts[j] += 1;
            for ci in 0..c {
                sums[ci * sh * sw + j] += image.data()[(ci * h + y) * w + x];
            }
        }
    }
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let j = cell(y, sh, h) * sw + cell(x, sw, w);
            for ci in 0..c {
                out[(ci * h + y) * w + x] = sums[ci * sh * sw + j] / counts[j] as f32;
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("shape")
}

fn dct_matrix() -> [[f32; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 {
            (1.0f32 / 8.0).sqrt()
        } else {
            (2.0f32 / 8.0).sqrt()
        };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f32 * u as f32 * PI / 16.0).cos();
        }
    }
    m
}

/// Orthonormal 8×8 block DCT with frequency-dependent uniform quantization.
fn jpeg_like(image: &Tensor, step: f32) -> Tensor {
    let (c, h, w) = image.chw().expect("image");
    let d = dct_matrix();
    let mut out = image.data().to_vec();
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [[0.0f32; 8]; 8];
                for (y, row) in block.iter_mut().enumerate() {
                    for (x, v) in row.iter_mut().enumerate() {
                        let (yy, xx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                        *v = plane[yy * w + xx];
                    }
                }
                let mut coef = [[0.0f32; 8]; 8];
                for u in 0..8 {
                    for v in 0..8 {
                        let mut s = 0.0;
                        for y in 0..8 {
                            for x in 0..8 {
                                s += d[u][y] * d[v][x] * block[y][x];
                            }
                        }
                        let q = step * (1.0 + (u + v) as f32);
                        coef[u][v] = (s / q).round() * q;
                    }
                }
                for y in 0..8 {
                    for x in 0..8 {
                        if by + y >= h || bx + x >= w {
                            continue;
                        }
                        let mut s = 0.0;
                        for u in 0..8 {
                            for v in 0..8 {
                                s += d[u][y] * d[v][x] * coef[u][v];
                            }
                        }
                        plane[(by + y) * w + bx + x] = s;
                    }
                }
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("shape")
}

/// Soft-edged mud-colored blobs blended over the image.
fn spatter(image: &Tensor, rng: &mut ChaCha8Rng, count: usize, alpha: f32) -> Tensor {
    let (c, h, w) = image.chw().expect("image");
    let mud = [0.25f32, 0.18, 0.1];
    let mut cover = vec![0.0f32; h * w];
    for _ in 0..count {
        let bx = rng.random_range(0.0..w as f32);
        let by = rng.random_range(0.0..h as f32);
        let r = rng.random_range(1.5..3.5f32);
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f32 - bx).powi(2) + (y as f32 - by).powi(2)).sqrt();
                let a = (r + 0.5 - d).clamp(0.0, 1.0);
                cover[y * w + x] = cover[y * w + x].max(a);
            }
        }
    }
    let mut out = image.data().to_vec();
    for ci in 0..c {
        for (i, v) in out[ci * h * w..(ci + 1) * h * w].iter_mut().enumerate() {
            let a = alpha * cover[i];
            *v = *v * (1.0 - a) + mud[ci % 3] * a;
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("shape")
}
