//! Small residual image-to-image network used as the learned enhancement entry.

use rand::Rng;

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{he_conv, BoundParams, ParamSet};

pub const HIDDEN: usize = 16;

/// Weights of `conv(C→16) → ReLU → conv(16→16) → ReLU → conv(16→C)`,
/// added to the input and clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerParams {
    pub params: ParamSet,
    channels: usize,
}

impl EnhancerParams {
    /// He-initialised hidden layers; the output layer starts at zero so the
    /// network is the identity.
    pub fn init<R: Rng>(rng: &mut R, channels: usize) -> Self {
        let mut p = ParamSet::new();
        p.push("conv1.w", he_conv(rng, HIDDEN, channels, 3));
        p.push("conv1.b", Tensor::zeros(&[HIDDEN]));
        p.push("conv2.w", he_conv(rng, HIDDEN, HIDDEN, 3));
        p.push("conv2.b", Tensor::zeros(&[HIDDEN]));
        p.push("conv3.w", Tensor::zeros(&[channels, HIDDEN, 3, 3]));
        p.push("conv3.b", Tensor::zeros(&[channels]));
        EnhancerParams { params: p, channels }
    }

    /// Wraps loaded weights after checking the layer shapes.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let channels = params.require("conv1.w")?.shape()[1];
        let expect: [(&str, Vec<usize>); 6] = [
            ("conv1.w", vec![HIDDEN, channels, 3, 3]),
            ("conv1.b", vec![HIDDEN]),
            ("conv2.w", vec![HIDDEN, HIDDEN, 3, 3]),
            ("conv2.b", vec![HIDDEN]),
            ("conv3.w", vec![channels, HIDDEN, 3, 3]),
            ("conv3.b", vec![channels]),
        ];
        for (name, shape) in expect {
            let got = params.require(name)?.shape();
            if got != shape.as_slice() {
                return Err(Error::contract(format!(
                    "enhancer `{name}` has shape {got:?}, expected {shape:?}"
                )));
            }
        }
        Ok(EnhancerParams { params, channels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn numel(&self) -> usize {
        self.params.numel()
    }
}

/// Residual enhancement on the graph. `p` must come from binding
/// [`EnhancerParams::params`].
pub fn enhance_var<T: Real>(g: &mut Graph<T>, x: Var, p: &BoundParams) -> Result<Var> {
    let (c, _, _) = g.value(x).chw()?;
    let w1 = p.var("conv1.w")?;
    if g.value(w1).shape()[1] != c {
        return Err(Error::contract(format!(
            "enhancer expects {} channels, image has {c}",
            g.value(w1).shape()[1]
        )));
    }
    let h = g.conv2d(x, w1, p.var("conv1.b")?)?;
    let h = g.relu(h)?;
    let h = g.conv2d(h, p.var("conv2.w")?, p.var("conv2.b")?)?;
    let h = g.relu(h)?;
    let r = g.conv2d(h, p.var("conv3.w")?, p.var("conv3.b")?)?;
    let y = g.add(x, r)?;
    g.clamp01(y)
}

/// Plain evaluation of [`enhance_var`].
pub fn neural_enhance(image: &Tensor, params: &EnhancerParams) -> Result<Tensor> {
    let mut g = Graph::<f32>::new();
    let bound = params.params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let y = enhance_var(&mut g, x, &bound)?;
    Ok(g.value(y).clone())
}
