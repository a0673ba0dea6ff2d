//! Named, ordered collections of learnable tensors.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered list of named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Appends every entry of `other`, prefixing names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) {
        for (n, t) in other.iter() {
            self.push(format!("{prefix}{n}"), t.clone());
        }
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.push(rest, t.clone());
            }
        }
        out
    }

    /// Records every tensor on `g` (cast to `T`).
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| {
                let mut t = t.cast::<T>();
                t.requires_grad = trainable;
                g.leaf(t)
            })
            .collect();
        BoundParams {
            names: self.entries.iter().map(|(n, _)| n.clone()).collect(),
            vars,
        }
    }

    /// SHA-256 over names, shapes and little-endian data.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.iter() {
            h.update(n.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Graph handles for a bound [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    /// Pairs names with variables already on a graph.
    pub fn from_vars(names: Vec<String>, vars: Vec<Var>) -> Self {
        assert_eq!(names.len(), vars.len());
        BoundParams { names, vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::contract(format!("parameter `{name}` not bound")))
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> BoundParams {
        let (names, vars) = self
            .names
            .iter()
            .zip(&self.vars)
            .filter_map(|(n, v)| n.strip_prefix(prefix).map(|rest| (rest.to_string(), *v)))
            .unzip();
        BoundParams { names, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-tensor gradients in binding order (zeros where none flowed).
    pub fn grads<T: Real>(&self, g: &Graph<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .map(|v| {
                g.grad(*v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); g.value(*v).len()])
            })
            .collect()
    }
}

/// He-normal initialised conv kernel `[out, in, k, k]`.
pub(crate) fn he_conv<R: Rng>(rng: &mut R, out: usize, inp: usize, k: usize) -> Tensor {
    let std = (2.0 / (inp * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..out * inp * k * k).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(vec![out, inp, k, k], data).expect("consistent shape")
}

/// Uniform(±1/√in) dense matrix `[out, in]`.
pub(crate) fn dense<R: Rng>(rng: &mut R, out: usize, inp: usize) -> Tensor {
    let bound = 1.0 / (inp as f32).sqrt();
    let data = (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![out, inp], data).expect("consistent shape")
}
