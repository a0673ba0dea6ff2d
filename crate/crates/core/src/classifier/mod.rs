//! Small CNN classifier, its training loop, and the shared Adam optimizer.

mod adam;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{Adam, StepDecay};

use crate::checkpoint;
use crate::corrupt::{mix_augment, Dataset, MixOp, NORMAL};
use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{dense, he_conv, BoundParams, ParamSet};

const WIDTH1: usize = 32;
const WIDTH2: usize = 64;

/// Weights of conv(C→32)/ReLU/pool, conv(32→64)/ReLU/pool, linear→classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    params: ParamSet,
    pub classes: usize,
    /// Input side length the linear layer was sized for.
    pub size: usize,
    frozen: bool,
}

impl ClassifierParams {
    pub fn init(seed: u64, channels: usize, size: usize, classes: usize) -> Result<Self> {
        if !size.is_multiple_of(4) || size == 0 || classes < 2 {
            return Err(Error::invalid(format!(
                "classifier needs size divisible by 4 and ≥ 2 classes, got {size}, {classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.push("conv1.w", he_conv(&mut rng, WIDTH1, channels, 3));
        params.push("conv1.b", Tensor::zeros(&[WIDTH1]));
        params.push("conv2.w", he_conv(&mut rng, WIDTH2, WIDTH1, 3));
        params.push("conv2.b", Tensor::zeros(&[WIDTH2]));
        let flat = WIDTH2 * (size / 4) * (size / 4);
        params.push("fc.w", dense(&mut rng, classes, flat));
        params.push("fc.b", Tensor::zeros(&[classes]));
        Ok(ClassifierParams {
            params,
            classes,
            size,
            frozen: false,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable weights; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParamSet> {
        if self.frozen {
            return Err(Error::contract("classifier is frozen"));
        }
        Ok(&mut self.params)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        self.params.bind(g, trainable && !self.frozen)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("classes".into(), self.classes.to_string());
        meta.insert("size".into(), self.size.to_string());
        checkpoint::save(path, "classifier", meta, &self.params)
    }

    /// Loads a checkpoint; loaded classifiers are frozen.
    pub fn load(path: &Path) -> Result<Self> {
        let (m, params) = checkpoint::load(path)?;
        if m.model != "classifier" {
            return Err(Error::format(
                "checkpoint",
                format!("expected a classifier, found `{}`", m.model),
            ));
        }
        let parse = |k: &str| -> Result<usize> {
            m.meta(k)?
                .parse()
                .map_err(|_| Error::format("checkpoint", format!("bad `{k}`")))
        };
        let (classes, size) = (parse("classes")?, parse("size")?);
        let fresh = ClassifierParams::init(0, params.require("conv1.w")?.shape()[1], size, classes)?;
        let same = fresh.params.len() == params.len()
            && fresh
                .params
                .iter()
                .zip(params.iter())
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape());
        if !same {
            return Err(Error::format("checkpoint", "classifier tensor layout mismatch"));
        }
        Ok(ClassifierParams {
            params,
            classes,
            size,
            frozen: true,
        })
    }
}

/// Logits for one `[C, H, W]` image on the graph.
pub fn classify_var<T: Real>(g: &mut Graph<T>, x: Var, b: &BoundParams) -> Result<Var> {
    let mut h = x;
    for i in 1..=2 {
        h = g.conv2d(h, b.var(&format!("conv{i}.w"))?, b.var(&format!("conv{i}.b"))?)?;
        h = g.relu(h)?;
        h = g.max_pool2(h)?;
    }
    let n = g.value(h).len();
    let flat = g.reshape(h, &[n])?;
    let w = b.var("fc.w")?;
    if g.value(w).shape()[1] != n {
        return Err(Error::contract(format!(
            "classifier expects {} features, image gives {n}",
            g.value(w).shape()[1]
        )));
    }
    g.linear(flat, w, b.var("fc.b")?)
}

pub fn classify(image: &Tensor, params: &ClassifierParams) -> Result<Vec<f32>> {
    let mut g = Graph::<f32>::new();
    let b = params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let y = classify_var(&mut g, x, &b)?;
    Ok(g.value(y).data().to_vec())
}

/// First index of the largest logit.
pub fn argmax(v: &[f32]) -> usize {
    (1..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

pub fn predict(images: &[Tensor], params: &ClassifierParams) -> Result<Vec<usize>> {
    images
        .par_iter()
        .map(|x| classify(x, params).map(|l| argmax(&l)))
        .collect()
}

/// Fraction of correct predictions.
pub fn accuracy(images: &[Tensor], labels: &[usize], params: &ClassifierParams) -> Result<f64> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::contract("accuracy needs matching non-empty images and labels"));
    }
    let pred = predict(images, params)?;
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Training-time augmentation of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub enum Augmentation {
    None,
    /// Mix augmentation with the base op set.
    Mix,
    /// Mix augmentation with an explicit op set.
    MixPlus(Vec<MixOp>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
            augmentation: Augmentation::None,
        }
    }
}

/// Sums per-sample `(loss, grads)` in sample order, so the result does not
/// depend on thread scheduling.
pub(crate) fn sum_grads(parts: Vec<(f64, Vec<Vec<f32>>)>) -> (f64, Vec<Vec<f64>>) {
    let mut it = parts.into_iter();
    let Some((l0, g0)) = it.next() else {
        return (0.0, Vec::new());
    };
    let mut acc: Vec<Vec<f64>> = g0.into_iter().map(|g| g.into_iter().map(f64::from).collect()).collect();
    let mut loss = l0;
    for (l, g) in it {
        loss += l;
        for (a, g) in acc.iter_mut().zip(g) {
            a.iter_mut().zip(g).for_each(|(a, g)| *a += g as f64);
        }
    }
    (loss, acc)
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Numeric failures inside an epoch are reported as divergence at that epoch.
pub(crate) fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric { op, detail } => Error::Training {
            epoch,
            detail: format!("{op}: {detail}"),
        },
        other => other,
    }
}

/// Trains from scratch with Adam; deterministic per seed.
///
/// Returns unfrozen parameters.
pub fn train_classifier(train: &Dataset, cfg: &ClassifierConfig) -> Result<ClassifierParams> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    let (c, h, w) = train.images[0].chw()?;
    if h != w {
        return Err(Error::invalid("classifier expects square images"));
    }
    let mut params = ClassifierParams::init(cfg.seed, c, h, train.classes)?;
    let ops: Option<Vec<MixOp>> = match &cfg.augmentation {
        Augmentation::None => None,
        Augmentation::Mix => Some(NORMAL.to_vec()),
        Augmentation::MixPlus(ops) => Some(ops.clone()),
    };
    let mut adam = Adam::new(params.params());
    let schedule = StepDecay::halving(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let parts: Vec<(f64, Vec<Vec<f32>>)> = chunk
                .par_iter()
                .map(|&i| {
                    let img = match &ops {
                        Some(ops) => mix_augment(&train.images[i], sample_seed(cfg.seed, epoch, i), ops)?,
                        None => train.images[i].clone(),
                    };
                    let mut g = Graph::<f32>::new();
                    let b = params.bind(&mut g, true);
                    let x = g.constant(img);
                    let logits = classify_var(&mut g, x, &b)?;
                    let loss = g.cross_entropy(logits, train.labels[i])?;
                    let l = g.value(loss).item() as f64;
                    g.backward(loss)?;
                    Ok((l, b.grads(&g)))
                })
                .collect::<Result<_>>()
                .map_err(|e| diverged(e, epoch))?;
            let (loss, mut grads) = sum_grads(parts);
            let n = chunk.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: format!("loss is {loss}"),
                });
            }
            grads.iter_mut().flatten().for_each(|g| *g /= n);
            adam.step(params.params_mut()?, &grads, schedule.at(epoch))?;
        }
        log::debug!("classifier epoch {epoch} done");
    }
    Ok(params)
}
