//! The augmentation catalog: specs, magnitude mapping and the differentiable
//! operations themselves.

mod color;
mod enhancer;
mod filters;
mod geometric;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use enhancer::{enhance_var, neural_enhance, EnhancerParams};

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::BoundParams;
use color::{AutoContrast, Brightness, Equalize, Gamma, Hue, Invert, Lerp, LerpOp};
use filters::{FilterBank, Sel, STEPS};
use geometric::{Warp, WarpOp};

#[allow(unused_imports)]
pub(crate) use color::{blur3, equalize_plane, LUMA};

/// A filter cutoff `step / 20`, with `step` in `1..=19`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cutoff(u8);

impl Cutoff {
    pub fn new(step: u8) -> Result<Self> {
        if (1..STEPS).contains(&step) {
            Ok(Cutoff(step))
        } else {
            Err(Error::invalid(format!("cutoff step {step} outside 1..=19")))
        }
    }

    /// Accepts only multiples of 0.05 in `[0.05, 0.95]`.
    pub fn from_value(c: f64) -> Result<Self> {
        let step = (c * STEPS as f64).round();
        if (c * STEPS as f64 - step).abs() > 1e-6 {
            return Err(Error::invalid(format!("cutoff {c} is not a multiple of 0.05")));
        }
        Cutoff::new(step as u8)
    }

    pub fn step(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / STEPS as f64
    }

    /// All 19 cutoffs, ascending.
    pub fn all() -> impl Iterator<Item = Cutoff> {
        (1..STEPS).map(Cutoff)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugKind {
    Rotate,
    Scale,
    Saturate,
    Contrast,
    Sharpness,
    Brightness,
    AutoContrast,
    Hue,
    Equalize,
    Invert,
    Gamma,
    LowPass(Cutoff),
    HighPass(Cutoff),
    NeuralEnhance,
}

/// Kinds with filters collapsed into their two groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugFamily {
    Rotate,
    Scale,
    Saturate,
    Contrast,
    Sharpness,
    Brightness,
    AutoContrast,
    Hue,
    Equalize,
    Invert,
    Gamma,
    LowPass,
    HighPass,
    NeuralEnhance,
}

impl AugFamily {
    pub const ALL: [AugFamily; 14] = [
        AugFamily::Rotate,
        AugFamily::Scale,
        AugFamily::Saturate,
        AugFamily::Contrast,
        AugFamily::Sharpness,
        AugFamily::Brightness,
        AugFamily::AutoContrast,
        AugFamily::Hue,
        AugFamily::Equalize,
        AugFamily::Invert,
        AugFamily::Gamma,
        AugFamily::LowPass,
        AugFamily::HighPass,
        AugFamily::NeuralEnhance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugFamily::Rotate => "rotate",
            AugFamily::Scale => "scale",
            AugFamily::Saturate => "saturate",
            AugFamily::Contrast => "contrast",
            AugFamily::Sharpness => "sharpness",
            AugFamily::Brightness => "brightness",
            AugFamily::AutoContrast => "auto-contrast",
            AugFamily::Hue => "hue",
            AugFamily::Equalize => "equalize",
            AugFamily::Invert => "invert",
            AugFamily::Gamma => "gamma",
            AugFamily::LowPass => "low-pass",
            AugFamily::HighPass => "high-pass",
            AugFamily::NeuralEnhance => "neural-enhance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AugFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown augmentation `{s}`")))
    }

    /// True for the filter groups.
    pub fn is_group(self) -> bool {
        matches!(self, AugFamily::LowPass | AugFamily::HighPass)
    }
}

impl fmt::Display for AugFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl AugKind {
    pub fn family(self) -> AugFamily {
        match self {
            AugKind::Rotate => AugFamily::Rotate,
            AugKind::Scale => AugFamily::Scale,
            AugKind::Saturate => AugFamily::Saturate,
            AugKind::Contrast => AugFamily::Contrast,
            AugKind::Sharpness => AugFamily::Sharpness,
            AugKind::Brightness => AugFamily::Brightness,
            AugKind::AutoContrast => AugFamily::AutoContrast,
            AugKind::Hue => AugFamily::Hue,
            AugKind::Equalize => AugFamily::Equalize,
            AugKind::Invert => AugFamily::Invert,
            AugKind::Gamma => AugFamily::Gamma,
            AugKind::LowPass(_) => AugFamily::LowPass,
            AugKind::HighPass(_) => AugFamily::HighPass,
            AugKind::NeuralEnhance => AugFamily::NeuralEnhance,
        }
    }

    /// Inverse of the `Display` form, e.g. `rotate` or `low-pass@0.35`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some((fam, cut)) = s.split_once('@') {
            let c = cut
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad cutoff in `{s}`")))
                .and_then(Cutoff::from_value)?;
            return match AugFamily::parse(fam)? {
                AugFamily::LowPass => Ok(AugKind::LowPass(c)),
                AugFamily::HighPass => Ok(AugKind::HighPass(c)),
                _ => Err(Error::invalid(format!("`{fam}` takes no cutoff"))),
            };
        }
        Ok(match AugFamily::parse(s)? {
            AugFamily::Rotate => AugKind::Rotate,
            AugFamily::Scale => AugKind::Scale,
            AugFamily::Saturate => AugKind::Saturate,
            AugFamily::Contrast => AugKind::Contrast,
            AugFamily::Sharpness => AugKind::Sharpness,
            AugFamily::Brightness => AugKind::Brightness,
            AugFamily::AutoContrast => AugKind::AutoContrast,
            AugFamily::Hue => AugKind::Hue,
            AugFamily::Equalize => AugKind::Equalize,
            AugFamily::Invert => AugKind::Invert,
            AugFamily::Gamma => AugKind::Gamma,
            AugFamily::NeuralEnhance => AugKind::NeuralEnhance,
            g => return Err(Error::invalid(format!("`{g}` needs a cutoff, e.g. `{g}@0.5`"))),
        })
    }

    pub fn is_filter(self) -> bool {
        matches!(self, AugKind::LowPass(_) | AugKind::HighPass(_))
    }

    /// Activation and unscaled range `M`, for parameterized kinds.
    fn table_range(self) -> Option<(Activation, f64)> {
        Some(match self {
            AugKind::Rotate => (Activation::Tanh, 30.0),
            AugKind::Scale => (Activation::Tanh, 0.3),
            AugKind::Saturate => (Activation::Sigmoid, 5.0),
            AugKind::Contrast => (Activation::Sigmoid, 3.0),
            AugKind::Sharpness => (Activation::Sigmoid, 10.0),
            AugKind::Brightness => (Activation::Tanh, 0.6),
            AugKind::Hue => (Activation::Tanh, 2.0),
            AugKind::Gamma => (Activation::Sigmoid, 3.0),
            _ => return None,
        })
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugKind::LowPass(c) | AugKind::HighPass(c) => {
                write!(f, "{}@{:.2}", self.family(), c.value())
            }
            _ => f.write_str(self.family().name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MagnitudeScale {
    Small,
    #[default]
    Standard,
    Large,
}

impl MagnitudeScale {
    pub const ALL: [MagnitudeScale; 3] = [MagnitudeScale::Small, MagnitudeScale::Standard, MagnitudeScale::Large];

    pub fn factor(self) -> f64 {
        match self {
            MagnitudeScale::Small => 0.5,
            MagnitudeScale::Standard => 1.0,
            MagnitudeScale::Large => 1.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MagnitudeScale::Small => "small",
            MagnitudeScale::Standard => "standard",
            MagnitudeScale::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        MagnitudeScale::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown magnitude scale `{s}`")))
    }
}

/// One catalog entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    pub activation: Activation,
    pub magnitude_range: Option<f64>,
    pub parameterized: bool,
}

impl AugmentationSpec {
    pub fn new(kind: AugKind, scale: MagnitudeScale) -> Self {
        match kind.table_range() {
            Some((activation, m)) => AugmentationSpec {
                kind,
                activation,
                magnitude_range: Some(m * scale.factor()),
                parameterized: true,
            },
            None => AugmentationSpec {
                kind,
                activation: Activation::None,
                magnitude_range: None,
                parameterized: false,
            },
        }
    }
}

/// The catalog with one family removed.
pub fn catalog_without(scale: MagnitudeScale, leave_out: Option<AugFamily>) -> Vec<AugmentationSpec> {
    catalog(scale)
        .into_iter()
        .filter(|s| Some(s.kind.family()) != leave_out)
        .collect()
}

/// The full catalog, in canonical order.
pub fn catalog(scale: MagnitudeScale) -> Vec<AugmentationSpec> {
    let mut kinds = vec![
        AugKind::Rotate,
        AugKind::Scale,
        AugKind::Saturate,
        AugKind::Contrast,
        AugKind::Sharpness,
        AugKind::Brightness,
        AugKind::AutoContrast,
        AugKind::Hue,
        AugKind::Equalize,
        AugKind::Invert,
        AugKind::Gamma,
    ];
    kinds.extend(Cutoff::all().map(AugKind::LowPass));
    kinds.extend(Cutoff::all().map(AugKind::HighPass));
    kinds.push(AugKind::NeuralEnhance);
    kinds.into_iter().map(|k| AugmentationSpec::new(k, scale)).collect()
}

/// `M·act(raw)`, or `None` for unparameterized kinds.
pub fn map_magnitude(raw: f64, spec: &AugmentationSpec) -> Option<f64> {
    let m = spec.magnitude_range?;
    match spec.activation {
        Activation::Tanh => Some(m * raw.tanh()),
        Activation::Sigmoid => Some(m / (1.0 + (-raw).exp())),
        Activation::None => None,
    }
}

/// Differentiable [`map_magnitude`] for a one-element `raw`.
pub fn map_magnitude_var<T: Real>(g: &mut Graph<T>, raw: Var, spec: &AugmentationSpec) -> Result<Option<Var>> {
    let Some(m) = spec.magnitude_range else {
        return Ok(None);
    };
    let a = match spec.activation {
        Activation::Tanh => g.tanh(raw)?,
        Activation::Sigmoid => g.sigmoid(raw)?,
        Activation::None => return Ok(None),
    };
    g.scale(a, m).map(Some)
}

/// Magnitude at which a parameterized kind leaves the image unchanged.
pub fn neutral_magnitude(kind: AugKind) -> Option<f64> {
    match kind.table_range()?.0 {
        Activation::Tanh => Some(0.0),
        _ => Some(1.0),
    }
}

fn check_args(kind: AugKind, has_m: bool, has_enhancer: bool) -> Result<()> {
    let parameterized = kind.table_range().is_some();
    if parameterized && !has_m {
        return Err(Error::contract(format!("{kind} needs a magnitude")));
    }
    if !parameterized && has_m {
        return Err(Error::contract(format!("{kind} takes no magnitude")));
    }
    let wants = kind == AugKind::NeuralEnhance;
    if wants != has_enhancer {
        return Err(Error::contract(if wants {
            "neural-enhance needs enhancer parameters".to_string()
        } else {
            format!("{kind} takes no enhancer parameters")
        }));
    }
    Ok(())
}

/// Records one augmentation on the graph, without the final clamp.
pub fn apply_unclamped_var<T: Real>(
    g: &mut Graph<T>,
    kind: AugKind,
    x: Var,
    m: Option<Var>,
    enhancer: Option<&BoundParams>,
) -> Result<Var> {
    check_args(kind, m.is_some(), enhancer.is_some())?;
    let (c, h, w) = g.value(x).chw()?;
    let m = || m.expect("checked above");
    match kind {
        AugKind::Rotate => g.apply(WarpOp { warp: Warp::Rotate }, &[x, m()]),
        AugKind::Scale => g.apply(WarpOp { warp: Warp::Scale }, &[x, m()]),
        AugKind::Saturate => g.apply(LerpOp { kind: Lerp::Saturate }, &[x, m()]),
        AugKind::Contrast => g.apply(LerpOp { kind: Lerp::Contrast }, &[x, m()]),
        AugKind::Sharpness => g.apply(LerpOp { kind: Lerp::Sharpness }, &[x, m()]),
        AugKind::Brightness => g.apply(Brightness, &[x, m()]),
        AugKind::Gamma => g.apply(Gamma, &[x, m()]),
        AugKind::Hue => g.apply(Hue, &[x, m()]),
        AugKind::AutoContrast => g.apply(AutoContrast, &[x]),
        AugKind::Equalize => g.apply(Equalize, &[x]),
        AugKind::Invert => g.apply(Invert, &[x]),
        AugKind::LowPass(_) | AugKind::HighPass(_) => {
            let y = filter_bank_unclamped_var(g, x, &[kind])?;
            g.reshape(y, &[c, h, w])
        }
        AugKind::NeuralEnhance => enhance_var(g, x, enhancer.expect("checked above")),
    }
}

/// Records one augmentation on the graph, clamped to `[0, 1]`.
pub fn apply_var<T: Real>(
    g: &mut Graph<T>,
    kind: AugKind,
    x: Var,
    m: Option<Var>,
    enhancer: Option<&BoundParams>,
) -> Result<Var> {
    let y = apply_unclamped_var(g, kind, x, m, enhancer)?;
    if kind == AugKind::NeuralEnhance {
        // Already clamped inside the residual block.
        return Ok(y);
    }
    g.clamp01(y)
}

/// All filter kinds in `kinds` at once, stacked as `[F, C, H, W]`, unclamped.
pub fn filter_bank_unclamped_var<T: Real>(g: &mut Graph<T>, x: Var, kinds: &[AugKind]) -> Result<Var> {
    let sels = kinds
        .iter()
        .map(|k| match k {
            AugKind::LowPass(c) => Ok(Sel {
                high: false,
                step: c.step(),
            }),
            AugKind::HighPass(c) => Ok(Sel {
                high: true,
                step: c.step(),
            }),
            other => Err(Error::contract(format!("{other} is not a filter"))),
        })
        .collect::<Result<Vec<_>>>()?;
    g.apply(FilterBank { sels }, &[x])
}

/// Filters several kinds at once; returns one clamped `[C, H, W]` image each.
pub fn filter_bank_var<T: Real>(g: &mut Graph<T>, x: Var, kinds: &[AugKind]) -> Result<Vec<Var>> {
    let (c, h, w) = g.value(x).chw()?;
    let stacked = filter_bank_unclamped_var(g, x, kinds)?;
    let n = c * h * w;
    (0..kinds.len())
        .map(|i| {
            let y = g.slice(stacked, i * n, &[c, h, w])?;
            g.clamp01(y)
        })
        .collect()
}

fn check_image(image: &Tensor) -> Result<()> {
    image.chw()?;
    if let Some(i) = image.first_non_finite() {
        return Err(Error::numeric(
            "augment",
            format!("input pixel {i} is {}", image.data()[i]),
        ));
    }
    Ok(())
}

/// Plain evaluation of [`apply_var`].
pub fn apply(kind: AugKind, image: &Tensor, m: Option<f64>, enhancer: Option<&EnhancerParams>) -> Result<Tensor> {
    check_image(image)?;
    check_args(kind, m.is_some(), enhancer.is_some())?;
    let mut g = Graph::<f32>::new();
    let x = g.constant(image.clone());
    let mv = m.map(|m| g.constant(Tensor::scalar(m as f32)));
    let bound = enhancer.map(|e| e.params.bind(&mut g, false));
    let y = apply_var(&mut g, kind, x, mv, bound.as_ref())?;
    Ok(g.value(y).clone())
}

/// Plain evaluation without the final clamp (used for filter algebra).
pub fn apply_unclamped(kind: AugKind, image: &Tensor, m: Option<f64>) -> Result<Tensor> {
    check_image(image)?;
    let mut g = Graph::<f32>::new();
    let x = g.constant(image.clone());
    let mv = m.map(|m| g.constant(Tensor::scalar(m as f32)));
    let y = apply_unclamped_var(&mut g, kind, x, mv, None)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests;
