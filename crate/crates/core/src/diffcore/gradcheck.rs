//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::real::Real;
use super::tape::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-input outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    /// Max relative error per input (`None` for inputs that were not checked).
    pub max_rel_err: Vec<Option<f32>>,
    pub checked_elements: usize,
    /// Elements left out because a derivative kink lies within `eps`.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    /// Worst error over all checked inputs.
    pub fn worst(&self) -> f32 {
        self.max_rel_err.iter().flatten().copied().fold(0.0, f32::max)
    }

    pub fn passes(&self, tol: f32) -> bool {
        self.worst() <= tol
    }
}

/// Relative error with denominator `max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Finite-difference checker configuration.
#[derive(Clone, Debug)]
pub struct GradCheck {
    eps: f32,
    seed: u64,
    sample_fraction: Option<f64>,
    kink_tol: Option<f64>,
}

impl GradCheck {
    pub fn new(eps: f32) -> Result<Self> {
        if !(1e-4..=1e-2).contains(&eps) {
            return Err(Error::invalid(format!("eps {eps} outside [1e-4, 1e-2]")));
        }
        Ok(GradCheck {
            eps,
            seed: 0,
            sample_fraction: None,
            kink_tol: None,
        })
    }

    /// Seed of the fixed random projection (and element sampling).
    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Check only a random fraction of each input's elements (at least one).
    pub fn sample(mut self, fraction: f64) -> Self {
        self.sample_fraction = Some(fraction.clamp(0.0, 1.0));
        self
    }

    /// Skip elements whose one-sided differences disagree by more than
    /// `tol` (relative): the function has a kink (ReLU, max-pool, clamp)
    /// inside `[x − eps, x + eps]`, where central differences are no oracle.
    pub fn skip_kinks(mut self, tol: f64) -> Self {
        self.kink_tol = Some(tol);
        self
    }

    /// Checks `f` w.r.t. every input whose `requires_grad` flag is set.
    ///
    /// Vector-valued outputs are reduced to a scalar by a fixed Gaussian
    /// projection, so one backward pass yields the whole analytic gradient.
    pub fn run<T, F>(&self, name: &str, f: F, inputs: &[Tensor<T>]) -> Result<GradCheckReport>
    where
        T: Real,
        F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let build = |values: &[Tensor<T>]| -> Result<(Graph<T>, Vec<Var>, Var)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
            let out = f(&mut g, &vars).map_err(|e| match e {
                Error::Numeric { op, detail } => Error::numeric(format!("{name}/{op}"), detail),
                other => other,
            })?;
            Ok((g, vars, out))
        };

        let (mut g, vars, out) = build(inputs)?;
        let n_out = g.value(out).len();
        let projection: Vec<T> = (0..n_out)
            .map(|_| {
                if n_out == 1 {
                    T::one()
                } else {
                    T::lit(StandardNormal.sample(&mut rng))
                }
            })
            .collect();
        let project = |t: &Tensor<T>| -> f64 { t.data().iter().zip(&projection).map(|(a, p)| a.f64() * p.f64()).sum() };
        let f0 = project(g.value(out));
        g.backward_with(out, projection.clone())?;
        let analytic: Vec<Option<Vec<T>>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| {
                t.requires_grad.then(|| {
                    g.grad(*v)
                        .map(<[T]>::to_vec)
                        .unwrap_or_else(|| vec![T::zero(); t.len()])
                })
            })
            .collect();
        drop(g);

        let mut report = GradCheckReport {
            op: name.to_string(),
            max_rel_err: vec![None; inputs.len()],
            checked_elements: 0,
            skipped_kinks: 0,
        };
        let mut work = inputs.to_vec();
        for (i, grad) in analytic.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let n = inputs[i].len();
            let elems: Vec<usize> = match self.sample_fraction {
                Some(frac) => {
                    let count = ((n as f64 * frac).ceil() as usize).clamp(1, n);
                    let mut idx = sample(&mut rng, n, count).into_vec();
                    idx.sort_unstable();
                    idx
                }
                None => (0..n).collect(),
            };
            let mut worst = 0.0f64;
            for j in elems {
                let x0 = inputs[i].data()[j];
                let eps = T::lit(self.eps as f64);
                work[i].data_mut()[j] = x0 + eps;
                let (gp, _, op) = build(&work)?;
                let fp = project(gp.value(op));
                let hi = work[i].data()[j].f64();
                work[i].data_mut()[j] = x0 - eps;
                let (gm, _, om) = build(&work)?;
                let fm = project(gm.value(om));
                let lo = work[i].data()[j].f64();
                work[i].data_mut()[j] = x0;
                let numeric = (fp - fm) / (hi - lo);
                if let Some(tol) = self.kink_tol {
                    let x0 = x0.f64();
                    if rel_err((fp - f0) / (hi - x0), (f0 - fm) / (x0 - lo)) > tol {
                        report.skipped_kinks += 1;
                        continue;
                    }
                }
                worst = worst.max(rel_err(grad[j].f64(), numeric));
                report.checked_elements += 1;
            }
            report.max_rel_err[i] = Some(worst as f32);
        }
        Ok(report)
    }
}
