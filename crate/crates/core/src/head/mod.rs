//! The per-image model: backbone, magnitude/weight head, pruning and blending.

mod prune;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use prune::{blend, prune_plan, prune_plan_or_argmax, redistribute, redistribution_targets};

use crate::augment::{
    apply_var, catalog_without, filter_bank_var, map_magnitude, map_magnitude_var, AugFamily, AugKind,
    AugmentationSpec, EnhancerParams, MagnitudeScale,
};
use crate::checkpoint;
use crate::diffcore::{softmax, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{he_conv, BoundParams, ParamSet};

/// Whether magnitudes are learned (`Full`) or pinned at raw 0 (`BlendOnly`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    BlendOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::BlendOnly => "blend-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "blend-only" => Ok(Mode::BlendOnly),
            _ => Err(Error::invalid(format!("unknown mode `{s}`"))),
        }
    }
}

pub const BACKBONE_WIDTH: usize = 16;
const BACKBONE: &str = "backbone.";
const ENHANCER: &str = "enhancer.";

/// Backbone, head and (when the catalog has it) enhancer weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DynttaParams {
    pub params: ParamSet,
    pub scale: MagnitudeScale,
    pub mode: Mode,
    specs: Vec<AugmentationSpec>,
    /// Magnitude slot in the head output for each spec.
    slots: Vec<Option<usize>>,
}

fn slots_for(specs: &[AugmentationSpec]) -> Vec<Option<usize>> {
    let mut next = 0;
    specs
        .iter()
        .map(|s| {
            s.parameterized.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

impl DynttaParams {
    /// Fresh weights for an arbitrary catalog. The head starts at zero, so
    /// the initial plan is uniform weights at raw magnitude 0.
    pub fn init(
        seed: u64,
        specs: Vec<AugmentationSpec>,
        scale: MagnitudeScale,
        mode: Mode,
        channels: usize,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::contract("empty augmentation catalog"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = slots_for(&specs);
        let p = slots.iter().flatten().count();
        let k = specs.len();
        let w = BACKBONE_WIDTH;
        let mut params = ParamSet::new();
        let mut inp = channels;
        for i in 1..=3 {
            params.push(format!("{BACKBONE}conv{i}.w"), he_conv(&mut rng, w, inp, 3));
            params.push(format!("{BACKBONE}conv{i}.b"), Tensor::zeros(&[w]));
            inp = w;
        }
        params.push(format!("{BACKBONE}head.w"), Tensor::zeros(&[p + k, w]));
        params.push(format!("{BACKBONE}head.b"), Tensor::zeros(&[p + k]));
        if specs.iter().any(|s| s.kind == AugKind::NeuralEnhance) {
            let e = EnhancerParams::init(&mut rng, channels);
            params.extend_prefixed(ENHANCER, &e.params);
        }
        Ok(DynttaParams {
            params,
            scale,
            mode,
            specs,
            slots,
        })
    }

    /// Standard catalog at `scale`, optionally with one family left out.
    pub fn standard(seed: u64, scale: MagnitudeScale, mode: Mode, leave_out: Option<AugFamily>) -> Result<Self> {
        DynttaParams::init(seed, catalog_without(scale, leave_out), scale, mode, 3)
    }

    pub fn specs(&self) -> &[AugmentationSpec] {
        &self.specs
    }

    pub fn k(&self) -> usize {
        self.specs.len()
    }

    pub fn p(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn enhancer(&self) -> Option<EnhancerParams> {
        let sub = self.params.subset(ENHANCER);
        if sub.is_empty() {
            None
        } else {
            EnhancerParams::from_params(sub).ok()
        }
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        self.params.bind(g, trainable)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("scale".into(), self.scale.name().into());
        meta.insert("mode".into(), self.mode.name().into());
        let kinds: Vec<String> = self.specs.iter().map(|s| s.kind.to_string()).collect();
        meta.insert("catalog".into(), kinds.join(","));
        checkpoint::save(path, "dyntta", meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (m, params) = checkpoint::load(path)?;
        if m.model != "dyntta" {
            return Err(Error::format(
                "checkpoint",
                format!("expected a dyntta model, found `{}`", m.model),
            ));
        }
        let scale = MagnitudeScale::parse(m.meta("scale")?)?;
        let mode = Mode::parse(m.meta("mode")?)?;
        let specs = m
            .meta("catalog")?
            .split(',')
            .map(|s| AugKind::parse(s).map(|k| AugmentationSpec::new(k, scale)))
            .collect::<Result<Vec<_>>>()?;
        let fresh = DynttaParams::init(0, specs, scale, mode, params.require("backbone.conv1.w")?.shape()[1])?;
        let same_layout = fresh.params.len() == params.len()
            && fresh
                .params
                .iter()
                .zip(params.iter())
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape());
        if !same_layout {
            return Err(Error::format("checkpoint", "tensor layout does not match the catalog"));
        }
        Ok(DynttaParams { params, ..fresh })
    }
}

/// Raw head output (`P` magnitudes then `K` weights) on the graph.
pub fn backbone_var<T: Real>(g: &mut Graph<T>, x: Var, b: &BoundParams) -> Result<Var> {
    let mut h = x;
    for i in 1..=3 {
        h = g.conv2d(
            h,
            b.var(&format!("{BACKBONE}conv{i}.w"))?,
            b.var(&format!("{BACKBONE}conv{i}.b"))?,
        )?;
        h = g.relu(h)?;
        h = g.max_pool2(h)?;
    }
    let f = g.global_avg_pool(h)?;
    g.linear(
        f,
        b.var(&format!("{BACKBONE}head.w"))?,
        b.var(&format!("{BACKBONE}head.b"))?,
    )
}

/// Raw magnitudes (`P`) and raw weights (`K`) for one image.
pub fn backbone_forward(image: &Tensor, params: &DynttaParams) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut g = Graph::<f32>::new();
    let b = params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let raw = backbone_var(&mut g, x, &b)?;
    let data = g.value(raw).data();
    let p = params.p();
    Ok((data[..p].to_vec(), data[p..].to_vec()))
}

/// Everything the blend of one image depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendPlan {
    pub weights: Vec<f64>,
    pub magnitudes: Vec<Option<f64>>,
    pub exec_mask: Vec<bool>,
}

impl BlendPlan {
    pub fn executed(&self) -> usize {
        self.exec_mask.iter().filter(|&&m| m).count()
    }
}

/// Softmax weights and mapped magnitudes for one image, before pruning.
pub fn raw_plan(image: &Tensor, params: &DynttaParams) -> Result<BlendPlan> {
    let (mags, ws) = backbone_forward(image, params)?;
    let weights = softmax(&ws.iter().map(|v| *v as f64).collect::<Vec<_>>())?;
    let magnitudes = params
        .specs
        .iter()
        .zip(&params.slots)
        .map(|(s, slot)| {
            slot.and_then(|i| {
                let raw = match params.mode {
                    Mode::Full => mags[i] as f64,
                    Mode::BlendOnly => 0.0,
                };
                map_magnitude(raw, s)
            })
        })
        .collect();
    Ok(BlendPlan {
        exec_mask: vec![true; weights.len()],
        weights,
        magnitudes,
    })
}

/// Records the blended output for one image.
///
/// `mask` selects the executed entries (batch-level pruning); skipped weight
/// moves to the next executed entry. `None` executes everything.
pub fn forward_var<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    params: &DynttaParams,
    b: &BoundParams,
    mode: Mode,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let k = params.k();
    let p = params.p();
    let raw = backbone_var(g, x, b)?;
    let raw_w = g.slice(raw, p, &[k])?;
    let w = g.softmax(raw_w)?;
    let exec: Vec<usize> = match mask {
        Some(m) if m.len() != k => return Err(Error::contract(format!("mask has {} entries, catalog {k}", m.len()))),
        Some(m) => (0..k).filter(|&i| m[i]).collect(),
        None => (0..k).collect(),
    };
    let w = if exec.len() == k {
        w
    } else {
        let targets = redistribution_targets(mask.expect("partial mask"))?;
        let compact: Vec<usize> = targets
            .iter()
            .map(|t| exec.binary_search(t).expect("target is executed"))
            .collect();
        g.regroup(w, compact, exec.len())?
    };

    let enhancer = b.subset(ENHANCER);
    let pinned = (mode == Mode::BlendOnly).then(|| g.constant(Tensor::scalar(T::zero())));
    let filters: Vec<AugKind> = exec
        .iter()
        .map(|&i| params.specs[i].kind)
        .filter(|k| k.is_filter())
        .collect();
    let mut filtered = if filters.is_empty() {
        Vec::new()
    } else {
        filter_bank_var(g, x, &filters)?
    }
    .into_iter();

    let mut items = Vec::with_capacity(exec.len());
    for &i in &exec {
        let spec = &params.specs[i];
        if spec.kind.is_filter() {
            items.push(filtered.next().expect("one output per filter"));
            continue;
        }
        let m = match params.slots[i] {
            Some(slot) => {
                let r = match pinned {
                    Some(c) => c,
                    None => g.index(raw, slot)?,
                };
                map_magnitude_var(g, r, spec)?
            }
            None => None,
        };
        let enh = (spec.kind == AugKind::NeuralEnhance).then_some(&enhancer);
        items.push(apply_var(g, spec.kind, x, m, enh)?);
    }
    let out = g.weighted_sum(w, &items)?;
    g.clamp01(out)
}

/// Blended output for a single image (mask computed from this image alone).
pub fn dyntta_forward(image: &Tensor, params: &DynttaParams, threshold: f64, mode: Mode) -> Result<Tensor> {
    let mut tmp = params.clone();
    tmp.mode = mode;
    let plan = raw_plan(image, &tmp)?;
    let (mask, _) = prune_plan(&[plan.weights], threshold)?;
    enhance_one(image, &tmp, &mask)
}

fn enhance_one(image: &Tensor, params: &DynttaParams, mask: &[bool]) -> Result<Tensor> {
    let mut g = Graph::<f32>::new();
    let b = params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let all = mask.iter().all(|&m| m);
    let y = forward_var(&mut g, x, params, &b, params.mode, (!all).then_some(mask))?;
    Ok(g.value(y).clone())
}

/// Result of enhancing a batch with one shared pruning plan.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub images: Vec<Tensor>,
    pub plans: Vec<BlendPlan>,
    pub executed: usize,
}

/// Enhances a batch: plans every image, prunes at the batch level (falling
/// back to the single strongest entry), then blends. Images are processed in
/// parallel; results keep input order.
pub fn enhance_batch(images: &[Tensor], params: &DynttaParams, threshold: f64) -> Result<BatchOutput> {
    if images.is_empty() {
        return Ok(BatchOutput {
            images: Vec::new(),
            plans: Vec::new(),
            executed: 0,
        });
    }
    let raw: Vec<BlendPlan> = images.par_iter().map(|x| raw_plan(x, params)).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = raw.iter().map(|p| p.weights.clone()).collect();
    let (mask, rows) = prune_plan_or_argmax(&rows, threshold)?;
    let out: Vec<Tensor> = images
        .par_iter()
        .map(|x| enhance_one(x, params, &mask))
        .collect::<Result<_>>()?;
    let plans = raw
        .into_iter()
        .zip(rows)
        .map(|(p, w)| BlendPlan {
            weights: w,
            magnitudes: p.magnitudes,
            exec_mask: mask.clone(),
        })
        .collect();
    Ok(BatchOutput {
        images: out,
        plans,
        executed: mask.iter().filter(|&&m| m).count(),
    })
}
