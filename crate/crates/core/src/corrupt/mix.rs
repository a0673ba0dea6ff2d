//! Simplified mixed-chain augmentation used for blind training.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1};

use super::imgops::{clamp01, gaussian_blur, map, warp, Fill};
use crate::augment::{self, AugKind, Cutoff};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const CHAINS: usize = 3;
const MAX_DEPTH: usize = 3;

/// Which side of the neutral magnitude an op samples from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Both,
    Up,
    Down,
}

impl Direction {
    pub fn opposite(self) -> Direction {
        match self {
            Direction::Both => Direction::Both,
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Direction::Both => "both",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    /// Draws from `[lo, neutral]`, `[neutral, hi]` or either with equal odds.
    fn sample(self, rng: &mut ChaCha8Rng, lo: f64, neutral: f64, hi: f64) -> f64 {
        let up = match self {
            Direction::Both => rng.random_bool(0.5),
            Direction::Up => true,
            Direction::Down => false,
        };
        if up {
            rng.random_range(neutral..=hi)
        } else {
            rng.random_range(lo..=neutral)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixOp {
    AutoContrast,
    Equalize,
    Posterize,
    Rotate,
    Solarize,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Saturation(Direction),
    Contrast(Direction),
    Brightness(Direction),
    Sharpness(Direction),
    /// `x^m`.
    Gamma(Direction),
    /// `x^(1/m)`, with `m` drawn like [`MixOp::Gamma`].
    InverseGamma(Direction),
    /// `x + s·HP(x)`: emphasizes high frequencies.
    HighPass,
    LowPass,
    Blur,
    Invert,
    Scale,
    Hue,
    Identity,
}

/// The nine base ops.
pub const NORMAL: [MixOp; 9] = [
    MixOp::AutoContrast,
    MixOp::Equalize,
    MixOp::Posterize,
    MixOp::Rotate,
    MixOp::Solarize,
    MixOp::ShearX,
    MixOp::ShearY,
    MixOp::TranslateX,
    MixOp::TranslateY,
];

/// Base ops plus the four color/sharpness ops of the full mixed-chain set.
pub fn all_ops() -> Vec<MixOp> {
    with_normal(&[
        MixOp::Saturation(Direction::Both),
        MixOp::Contrast(Direction::Both),
        MixOp::Brightness(Direction::Both),
        MixOp::Sharpness(Direction::Both),
    ])
}

/// Base ops plus `extra`, without duplicates.
pub fn with_normal(extra: &[MixOp]) -> Vec<MixOp> {
    let mut ops = NORMAL.to_vec();
    for op in extra {
        if !ops.contains(op) {
            ops.push(*op);
        }
    }
    ops
}

/// Named op set: `normal`, `all`, or `estimated` (base ops plus
/// saturation, contrast, high-pass and gamma).
pub fn op_set(name: &str) -> Result<Vec<MixOp>> {
    match name {
        "normal" => Ok(NORMAL.to_vec()),
        "all" => Ok(all_ops()),
        "estimated" => Ok(with_normal(&[
            MixOp::Saturation(Direction::Both),
            MixOp::Contrast(Direction::Both),
            MixOp::HighPass,
            MixOp::Gamma(Direction::Both),
        ])),
        other => Err(Error::invalid(format!("unknown op set `{other}`"))),
    }
}

impl MixOp {
    /// Bare op name, without direction.
    pub fn name(self) -> &'static str {
        match self {
            MixOp::AutoContrast => "autocontrast",
            MixOp::Equalize => "equalize",
            MixOp::Posterize => "posterize",
            MixOp::Rotate => "rotate",
            MixOp::Solarize => "solarize",
            MixOp::ShearX => "shearX",
            MixOp::ShearY => "shearY",
            MixOp::TranslateX => "translateX",
            MixOp::TranslateY => "translateY",
            MixOp::Saturation(_) => "saturation",
            MixOp::Contrast(_) => "contrast",
            MixOp::Brightness(_) => "brightness",
            MixOp::Sharpness(_) => "sharpness",
            MixOp::Gamma(_) => "gamma",
            MixOp::InverseGamma(_) => "inverse-gamma",
            MixOp::HighPass => "highpass",
            MixOp::LowPass => "lowpass",
            MixOp::Blur => "blur",
            MixOp::Invert => "invert",
            MixOp::Scale => "scale",
            MixOp::Hue => "hue",
            MixOp::Identity => "identity",
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            MixOp::Saturation(d)
            | MixOp::Contrast(d)
            | MixOp::Brightness(d)
            | MixOp::Sharpness(d)
            | MixOp::Gamma(d)
            | MixOp::InverseGamma(d) => Some(d),
            _ => None,
        }
    }

    /// Parses `name` or `name:up` / `name:down` / `name:both`.
    pub fn parse(s: &str) -> Result<MixOp> {
        let (base, dir) = match s.split_once(':') {
            Some((b, d)) => {
                let d = match d {
                    "up" => Direction::Up,
                    "down" => Direction::Down,
                    "both" => Direction::Both,
                    _ => return Err(Error::invalid(format!("unknown direction in `{s}`"))),
                };
                (b, Some(d))
            }
            None => (s, None),
        };
        let d = dir.unwrap_or(Direction::Both);
        let op = match base {
            "autocontrast" => MixOp::AutoContrast,
            "equalize" => MixOp::Equalize,
            "posterize" => MixOp::Posterize,
            "rotate" => MixOp::Rotate,
            "solarize" => MixOp::Solarize,
            "shearX" => MixOp::ShearX,
            "shearY" => MixOp::ShearY,
            "translateX" => MixOp::TranslateX,
            "translateY" => MixOp::TranslateY,
            "saturation" | "saturate" => MixOp::Saturation(d),
            "contrast" => MixOp::Contrast(d),
            "brightness" => MixOp::Brightness(d),
            "sharpness" => MixOp::Sharpness(d),
            "gamma" => MixOp::Gamma(d),
            "inverse-gamma" => MixOp::InverseGamma(d),
            "highpass" => MixOp::HighPass,
            "lowpass" => MixOp::LowPass,
            "blur" => MixOp::Blur,
            "invert" => MixOp::Invert,
            "scale" => MixOp::Scale,
            "hue" => MixOp::Hue,
            "identity" => MixOp::Identity,
            _ => return Err(Error::invalid(format!("unknown mix op `{s}`"))),
        };
        if dir.is_some() && op.direction().is_none() {
            return Err(Error::invalid(format!("mix op `{base}` takes no direction")));
        }
        Ok(op)
    }

    /// Applies the op with magnitudes drawn from `rng`.
    pub(crate) fn apply(self, img: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let (_, h, w) = img.chw()?;
        let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
        let signed = |rng: &mut ChaCha8Rng, hi: f32| {
            let v = rng.random_range(0.0..=hi);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        };
        let aug = |kind: AugKind, m: Option<f64>| augment::apply(kind, img, m, None);
        Ok(match self {
            MixOp::AutoContrast => aug(AugKind::AutoContrast, None)?,
            MixOp::Equalize => aug(AugKind::Equalize, None)?,
            MixOp::Invert => aug(AugKind::Invert, None)?,
            MixOp::Identity => img.clone(),
            MixOp::Posterize => {
                let bits = rng.random_range(3..=6);
                let levels = (1u32 << bits) as f32;
                map(img, |v| ((v * 255.0 + 0.5).floor() / 256.0 * levels).floor() / levels)
            }
            MixOp::Solarize => {
                let t = rng.random_range(0.5..=1.0f32);
                map(img, |v| if v >= t { 1.0 - v } else { v })
            }
            MixOp::Rotate => aug(AugKind::Rotate, Some(signed(rng, 30.0) as f64))?,
            MixOp::Scale => aug(AugKind::Scale, Some(signed(rng, 0.2) as f64))?,
            MixOp::Hue => aug(AugKind::Hue, Some(signed(rng, 0.5) as f64))?,
            MixOp::ShearX => {
                let s = signed(rng, 0.3);
                warp(img, Fill::Zero, |x, y| (x + s * (y - cy), y))
            }
            MixOp::ShearY => {
                let s = signed(rng, 0.3);
                warp(img, Fill::Zero, |x, y| (x, y + s * (x - cx)))
            }
            MixOp::TranslateX => {
                let t = signed(rng, w as f32 / 8.0);
                warp(img, Fill::Zero, |x, y| (x - t, y))
            }
            MixOp::TranslateY => {
                let t = signed(rng, h as f32 / 8.0);
                warp(img, Fill::Zero, |x, y| (x, y - t))
            }
            MixOp::Saturation(d) => aug(AugKind::Saturate, Some(d.sample(rng, 0.1, 1.0, 2.5)))?,
            MixOp::Contrast(d) => aug(AugKind::Contrast, Some(d.sample(rng, 0.2, 1.0, 2.0)))?,
            MixOp::Brightness(d) => aug(AugKind::Brightness, Some(d.sample(rng, -0.3, 0.0, 0.3)))?,
            MixOp::Sharpness(d) => aug(AugKind::Sharpness, Some(d.sample(rng, 0.0, 1.0, 3.0)))?,
            MixOp::Gamma(d) => aug(AugKind::Gamma, Some(d.sample(rng, 0.5, 1.0, 2.0)))?,
            MixOp::InverseGamma(d) => aug(AugKind::Gamma, Some(1.0 / d.sample(rng, 0.5, 1.0, 2.0)))?,
            MixOp::HighPass => {
                let c = Cutoff::new(rng.random_range(2..=10))?;
                let s = rng.random_range(0.5..=2.0f32);
                let hp = augment::apply_unclamped(AugKind::HighPass(c), img, None)?;
                let out = img.data().iter().zip(hp.data()).map(|(x, e)| x + s * e).collect();
                clamp01(Tensor::new(img.shape().to_vec(), out)?)
            }
            MixOp::LowPass => aug(AugKind::LowPass(Cutoff::new(rng.random_range(6..=14))?), None)?,
            MixOp::Blur => clamp01(gaussian_blur(img, rng.random_range(0.4..=1.0))),
        })
    }
}

impl fmt::Display for MixOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.direction() {
            Some(Direction::Both) | None => f.write_str(self.name()),
            Some(d) => write!(f, "{}:{}", self.name(), d.name()),
        }
    }
}

/// Three chains of 1–3 random ops, Dirichlet(1,1,1)-weighted, then blended
/// with the original by a Beta(1,1) draw `b` as `(1−b)·x + b·mix`.
pub fn mix_augment(image: &Tensor, seed: u64, ops: &[MixOp]) -> Result<Tensor> {
    mix_augment_with(image, seed, ops, None)
}

/// [`mix_augment`] with an optional fixed blend coefficient `b`.
pub fn mix_augment_with(image: &Tensor, seed: u64, ops: &[MixOp], beta: Option<f64>) -> Result<Tensor> {
    image.chw()?;
    if ops.is_empty() {
        return Err(Error::invalid("mix_augment needs at least one op"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: [f64; CHAINS] = std::array::from_fn(|_| Exp1.sample(&mut rng));
    let total: f64 = raw.iter().sum();
    let b = match beta {
        Some(b) => b,
        None => Beta::new(1.0, 1.0).expect("valid shape").sample(&mut rng),
    };
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!("blend coefficient {b} outside [0, 1]")));
    }
    let mut mixed = vec![0.0f64; image.len()];
    for wi in raw {
        let depth = rng.random_range(1..=MAX_DEPTH);
        let mut x = image.clone();
        for _ in 0..depth {
            let op = ops[rng.random_range(0..ops.len())];
            x = op.apply(&x, &mut rng)?;
        }
        for (m, v) in mixed.iter_mut().zip(x.data()) {
            *m += wi / total * *v as f64;
        }
    }
    if b == 0.0 {
        return Ok(image.clone());
    }
    let out = image
        .data()
        .iter()
        .zip(&mixed)
        .map(|(x, m)| ((1.0 - b) * *x as f64 + b * m).clamp(0.0, 1.0) as f32)
        .collect();
    Tensor::new(image.shape().to_vec(), out)
}
