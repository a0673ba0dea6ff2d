//! Finite-difference self-test over every differentiable primitive, every
//! differentiable augmentation and the end-to-end blend pipeline.
//!
//! Equalize is absent: its image gradient is a straight-through estimate,
//! not a derivative, so no finite-difference oracle applies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_unclamped_var, catalog, enhance_var, Activation, AugFamily, AugKind, Cutoff, EnhancerParams, MagnitudeScale,
};
use crate::diffcore::{GradCheck, GradCheckReport, Graph, Tensor, Var};
use crate::error::Result;
use crate::head::{forward_var, DynttaParams, Mode};
use crate::params::BoundParams;

/// Tolerance for primitives and pixel-local augmentations.
pub const TOL: f32 = 1e-3;
/// Tolerance for resampling ops (rotate, scale) and the full pipeline.
pub const TOL_RESAMPLING: f32 = 5e-3;
const EPS: f32 = 1e-4;
const KINK_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub tolerance: f32,
    /// Worst relative error over all seeds and inputs.
    pub max_rel_err: f32,
    pub seeds: usize,
    pub checked_elements: usize,
    pub skipped_kinks: usize,
}

impl SuiteEntry {
    /// Within tolerance, with kink skips limited to a tenth of the checks.
    pub fn passes(&self) -> bool {
        self.max_rel_err <= self.tolerance && self.skipped_kinks * 10 <= self.checked_elements
    }
}

type Check = Box<dyn Fn(u64) -> Result<GradCheckReport> + Sync>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

fn checker(seed: u64) -> GradCheck {
    GradCheck::new(EPS).expect("eps in range").seed(seed)
}

/// `f` applied to fresh random inputs of the given shapes, all tracked.
fn primitive<F>(
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    lo: f64,
    hi: f64,
    kinks: bool,
    f: F,
) -> (String, f32, Check)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Sync + Send + Copy + 'static,
{
    let check: Check = Box::new(move |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| uniform(&mut rng, s, lo, hi).with_grad())
            .collect();
        let c = if kinks {
            checker(seed).skip_kinks(KINK_TOL)
        } else {
            checker(seed)
        };
        c.run(name, f, &inputs)
    });
    (name.to_string(), TOL, check)
}

fn primitives() -> Vec<(String, f32, Check)> {
    vec![
        primitive("add", vec![vec![6], vec![6]], -1.0, 1.0, false, |g, v| {
            g.add(v[0], v[1])
        }),
        primitive("mul", vec![vec![6], vec![6]], -1.0, 1.0, false, |g, v| {
            g.mul(v[0], v[1])
        }),
        primitive("affine", vec![vec![6]], -1.0, 1.0, false, |g, v| {
            g.affine(v[0], 1.7, -0.3)
        }),
        primitive("scale-by", vec![vec![6]], -1.0, 1.0, false, |g, v| g.scale(v[0], -2.5)),
        primitive("tanh", vec![vec![8]], -2.0, 2.0, false, |g, v| g.tanh(v[0])),
        primitive("sigmoid", vec![vec![8]], -3.0, 3.0, false, |g, v| g.sigmoid(v[0])),
        primitive("relu", vec![vec![8]], -1.0, 1.0, true, |g, v| g.relu(v[0])),
        primitive("clamp01", vec![vec![8]], -0.5, 1.5, true, |g, v| g.clamp01(v[0])),
        primitive("sum", vec![vec![3, 4]], -1.0, 1.0, false, |g, v| g.sum(v[0])),
        primitive("mean", vec![vec![3, 4]], -1.0, 1.0, false, |g, v| g.mean(v[0])),
        primitive("dot", vec![vec![7], vec![7]], -1.0, 1.0, false, |g, v| {
            g.dot(v[0], v[1])
        }),
        primitive("softmax", vec![vec![9]], -2.0, 2.0, false, |g, v| g.softmax(v[0])),
        primitive("cross-entropy", vec![vec![10]], -2.0, 2.0, false, |g, v| {
            g.cross_entropy(v[0], 3)
        }),
        primitive("slice", vec![vec![3, 4, 4]], -1.0, 1.0, false, |g, v| {
            g.slice(v[0], 16, &[2, 4, 4])
        }),
        primitive("index", vec![vec![5]], -1.0, 1.0, false, |g, v| g.index(v[0], 2)),
        primitive("reshape", vec![vec![2, 6]], -1.0, 1.0, false, |g, v| {
            g.reshape(v[0], &[3, 4])
        }),
        primitive(
            "weighted-sum",
            vec![vec![3], vec![2, 3], vec![2, 3], vec![2, 3]],
            -1.0,
            1.0,
            false,
            |g, v| g.weighted_sum(v[0], &v[1..]),
        ),
        primitive("regroup", vec![vec![5]], 0.0, 1.0, false, |g, v| {
            g.regroup(v[0], vec![0, 0, 2, 3, 0], 4)
        }),
        primitive(
            "conv2d",
            vec![vec![2, 5, 5], vec![3, 2, 3, 3], vec![3]],
            -1.0,
            1.0,
            false,
            |g, v| g.conv2d(v[0], v[1], v[2]),
        ),
        primitive("max-pool", vec![vec![2, 4, 4]], -1.0, 1.0, true, |g, v| {
            g.max_pool2(v[0])
        }),
        primitive("global-avg-pool", vec![vec![3, 4, 4]], -1.0, 1.0, false, |g, v| {
            g.global_avg_pool(v[0])
        }),
        primitive(
            "linear",
            vec![vec![6], vec![4, 6], vec![4]],
            -1.0,
            1.0,
            false,
            |g, v| g.linear(v[0], v[1], v[2]),
        ),
    ]
}

fn augmentations() -> Vec<(String, f32, Check)> {
    let mut out: Vec<(String, f32, Check)> = Vec::new();
    for spec in catalog(MagnitudeScale::Standard) {
        let kind = spec.kind;
        let Some(range) = spec.magnitude_range else { continue };
        let activation = spec.activation;
        let tol = match kind {
            AugKind::Rotate | AugKind::Scale => TOL_RESAMPLING,
            _ => TOL,
        };
        out.push((
            kind.to_string(),
            tol,
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
                // Magnitudes strictly inside the range the activation can reach.
                let m = match activation {
                    Activation::Tanh => rng.random_range(-0.9..0.9) * range,
                    _ => rng.random_range(0.1..0.9) * range,
                };
                let x = uniform(&mut rng, &[3, 10, 10], 0.05, 0.95).with_grad();
                checker(seed).run(
                    &kind.to_string(),
                    |g, v| apply_unclamped_var(g, kind, v[0], Some(v[1]), None),
                    &[x, Tensor::scalar(m).with_grad()],
                )
            }),
        ));
    }
    let mut plain = vec![AugKind::AutoContrast, AugKind::Invert];
    plain.extend(Cutoff::all().flat_map(|c| [AugKind::LowPass(c), AugKind::HighPass(c)]));
    for kind in plain {
        out.push((
            kind.to_string(),
            TOL,
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 2000);
                let x = uniform(&mut rng, &[3, 8, 8], 0.05, 0.95).with_grad();
                checker(seed).run(
                    &kind.to_string(),
                    |g, v| apply_unclamped_var(g, kind, v[0], None, None),
                    &[x],
                )
            }),
        ));
    }
    out.push((
        AugKind::NeuralEnhance.to_string(),
        TOL,
        Box::new(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 3000);
            let mut e = EnhancerParams::init(&mut rng, 3);
            // Perturb every weight so the zero-initialized output layer also
            // propagates gradient.
            for t in e.params.tensors_mut() {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v += rng.random_range(-0.05..0.05));
            }
            let names: Vec<String> = e.params.iter().map(|(n, _)| n.to_string()).collect();
            let mut inputs = vec![uniform(&mut rng, &[3, 6, 6], 0.2, 0.8).with_grad()];
            inputs.extend(e.params.iter().map(|(_, t)| t.cast::<f64>().with_grad()));
            checker(seed).sample(0.2).run(
                "neural-enhance",
                move |g, v| enhance_var(g, v[0], &BoundParams::from_vars(names.clone(), v[1..].to_vec())),
                &inputs,
            )
        }),
    ));
    out
}

/// Standard model with a random head, so plans are far from uniform.
fn pipeline_model(seed: u64, mode: Mode, leave_out: Option<AugFamily>) -> Result<DynttaParams> {
    let mut p = DynttaParams::standard(seed, MagnitudeScale::Standard, mode, leave_out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4000);
    for name in ["backbone.head.w", "backbone.head.b"] {
        if let Some(t) = p.params.get_mut(name) {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.3..0.3f32));
        }
    }
    Ok(p)
}

/// End-to-end checks: model parameters in both modes on the full catalog,
/// and the input image on the catalog without Equalize.
fn pipeline() -> Vec<(String, f32, Check)> {
    let run = |seed: u64, mode: Mode, image_grad: bool| -> Result<GradCheckReport> {
        let leave_out = image_grad.then_some(AugFamily::Equalize);
        let p = pipeline_model(seed, mode, leave_out)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 5000);
        let img = uniform(&mut rng, &[3, 16, 16], 0.15, 0.85);
        let names: Vec<String> = p.params.iter().map(|(n, _)| n.to_string()).collect();
        let mut inputs = vec![if image_grad { img.with_grad() } else { img }];
        if !image_grad {
            inputs.extend(p.params.iter().map(|(_, t)| t.cast::<f64>().with_grad()));
        } else {
            inputs.extend(p.params.iter().map(|(_, t)| t.cast::<f64>()));
        }
        let name = if image_grad {
            "pipeline/image"
        } else {
            "pipeline/params"
        };
        checker(seed)
            .sample(if image_grad { 0.05 } else { 0.01 })
            .skip_kinks(KINK_TOL)
            .run(
                name,
                move |g, v| {
                    let b = BoundParams::from_vars(names.clone(), v[1..].to_vec());
                    forward_var(g, v[0], &p, &b, mode, None)
                },
                &inputs,
            )
    };
    vec![
        (
            "pipeline/full".to_string(),
            TOL_RESAMPLING,
            Box::new(move |s| run(s, Mode::Full, false)) as Check,
        ),
        (
            "pipeline/blend-only".to_string(),
            TOL_RESAMPLING,
            Box::new(move |s| run(s, Mode::BlendOnly, false)),
        ),
        (
            "pipeline/image".to_string(),
            TOL_RESAMPLING,
            Box::new(move |s| run(s, Mode::Full, true)),
        ),
    ]
}

/// Names of every check, in run order.
pub fn suite_names() -> Vec<String> {
    primitives()
        .into_iter()
        .chain(augmentations())
        .chain(pipeline())
        .map(|(n, _, _)| n)
        .collect()
}

/// Runs every check at seeds `0..seeds`; `filter` keeps checks whose name
/// contains it.
pub fn run_suite(seeds: u64, filter: Option<&str>) -> Result<Vec<SuiteEntry>> {
    use rayon::prelude::*;
    let checks: Vec<(String, f32, Check)> = primitives()
        .into_iter()
        .chain(augmentations())
        .chain(pipeline())
        .filter(|(n, _, _)| filter.is_none_or(|f| n.contains(f)))
        .collect();
    checks
        .par_iter()
        .map(|(name, tol, check)| {
            let mut entry = SuiteEntry {
                name: name.clone(),
                tolerance: *tol,
                max_rel_err: 0.0,
                seeds: seeds as usize,
                checked_elements: 0,
                skipped_kinks: 0,
            };
            for seed in 0..seeds {
                let r = check(seed)?;
                entry.max_rel_err = entry.max_rel_err.max(r.worst());
                entry.checked_elements += r.checked_elements;
                entry.skipped_kinks += r.skipped_kinks;
            }
            Ok(entry)
        })
        .collect()
}
