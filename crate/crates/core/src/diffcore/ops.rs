//! Elementwise, reduction and probability primitives.

use super::real::Real;
use super::tape::{Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn same_shape<T: Real>(name: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "{name}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn map_unary<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

fn add_into<T: Real>(acc: &mut [T], g: &[T]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
}

/// Numerically stable softmax (max-subtracted, accumulated in `f64`).
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax input is not finite"));
    }
    let max = v.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x.f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| T::lit(e / total)).collect())
}

/// `-log softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("logits are not finite"));
    }
    let max = logits.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x.f64() - max).exp()).sum::<f64>().ln();
    Ok(T::lit((lse - logits[label].f64()).max(0.0)))
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) struct Add;

impl<T: Real> Op<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("add", x[0], x[1])?;
        let data = x[0].data().iter().zip(x[1].data()).map(|(a, b)| *a + *b).collect();
        Tensor::new(x[0].shape().to_vec(), data)
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        for slot in grads.iter_mut().flatten() {
            add_into(slot, g);
        }
    }
}

pub(crate) struct Mul;

impl<T: Real> Op<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        same_shape("mul", x[0], x[1])?;
        let data = x[0].data().iter().zip(x[1].data()).map(|(a, b)| *a * *b).collect();
        Tensor::new(x[0].shape().to_vec(), data)
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        for (i, other) in [(0usize, 1usize), (1, 0)] {
            if let Some(gx) = grads[i].as_mut() {
                for ((a, gi), b) in gx.iter_mut().zip(g).zip(x[other].data()) {
                    *a += *gi * *b;
                }
            }
        }
    }
}

/// `x * scale + shift` with constant coefficients.
pub(crate) struct Affine<T> {
    pub scale: T,
    pub shift: T,
}

impl<T: Real> Op<T> for Affine<T> {
    fn name(&self) -> &'static str {
        "affine"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(map_unary(x[0], |v| v * self.scale + self.shift))
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            gx.iter_mut().zip(g).for_each(|(a, b)| *a += *b * self.scale);
        }
    }
}

pub(crate) struct Tanh;

impl<T: Real> Op<T> for Tanh {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(map_unary(x[0], T::tanh))
    }
    fn vjp(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            for ((a, gi), t) in gx.iter_mut().zip(g).zip(y.data()) {
                *a += *gi * (T::one() - *t * *t);
            }
        }
    }
}

pub(crate) struct Sigmoid;

impl<T: Real> Op<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(map_unary(x[0], sigmoid))
    }
    fn vjp(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            for ((a, gi), s) in gx.iter_mut().zip(g).zip(y.data()) {
                *a += *gi * *s * (T::one() - *s);
            }
        }
    }
}

pub(crate) struct Relu;

impl<T: Real> Op<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(map_unary(x[0], |v| v.max(T::zero())))
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            for ((a, gi), v) in gx.iter_mut().zip(g).zip(x[0].data()) {
                if *v > T::zero() {
                    *a += *gi;
                }
            }
        }
    }
}

/// Clamp to `[0, 1]`; zero gradient outside the interval.
pub(crate) struct Clamp01;

impl<T: Real> Op<T> for Clamp01 {
    fn name(&self) -> &'static str {
        "clamp01"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(map_unary(x[0], |v| v.max(T::zero()).min(T::one())))
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            for ((a, gi), v) in gx.iter_mut().zip(g).zip(x[0].data()) {
                if *v >= T::zero() && *v <= T::one() {
                    *a += *gi;
                }
            }
        }
    }
}

pub(crate) struct Sum {
    pub mean: bool,
}

impl<T: Real> Op<T> for Sum {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let total: f64 = x[0].data().iter().map(|v| v.f64()).sum();
        let n = x[0].len() as f64;
        Ok(Tensor::scalar(T::lit(if self.mean { total / n } else { total })))
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            let d = if self.mean {
                g[0] / T::lit(x[0].len() as f64)
            } else {
                g[0]
            };
            gx.iter_mut().for_each(|a| *a += d);
        }
    }
}

pub(crate) struct Dot;

impl<T: Real> Op<T> for Dot {
    fn name(&self) -> &'static str {
        "dot"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if x[0].len() != x[1].len() {
            return Err(Error::contract("dot: length mismatch"));
        }
        let s: f64 = x[0]
            .data()
            .iter()
            .zip(x[1].data())
            .map(|(a, b)| a.f64() * b.f64())
            .sum();
        Ok(Tensor::scalar(T::lit(s)))
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        for (i, other) in [(0usize, 1usize), (1, 0)] {
            if let Some(gx) = grads[i].as_mut() {
                gx.iter_mut().zip(x[other].data()).for_each(|(a, b)| *a += g[0] * *b);
            }
        }
    }
}

pub(crate) struct Softmax;

impl<T: Real> Op<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let y = softmax(x[0].data())?;
        Tensor::new(x[0].shape().to_vec(), y)
    }
    fn vjp(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            let inner: f64 = y.data().iter().zip(g).map(|(s, gi)| s.f64() * gi.f64()).sum();
            let inner = T::lit(inner);
            for ((a, s), gi) in gx.iter_mut().zip(y.data()).zip(g) {
                *a += *s * (*gi - inner);
            }
        }
    }
}

pub(crate) struct CrossEntropy<T> {
    pub label: usize,
    probs: Vec<T>,
}

impl<T: Real> Op<T> for CrossEntropy<T> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let loss = cross_entropy(x[0].data(), self.label)?;
        self.probs = softmax(x[0].data())?;
        Ok(Tensor::scalar(loss))
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            for (i, (a, p)) in gx.iter_mut().zip(&self.probs).enumerate() {
                let onehot = if i == self.label { T::one() } else { T::zero() };
                *a += g[0] * (*p - onehot);
            }
        }
    }
}

/// Contiguous flat sub-range, reshaped to `shape`.
pub(crate) struct Slice {
    pub start: usize,
    pub shape: Vec<usize>,
}

impl<T: Real> Op<T> for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let len: usize = self.shape.iter().product();
        let end = self.start + len;
        if end > x[0].len() {
            return Err(Error::contract(format!(
                "slice {}..{end} out of bounds for {} elements",
                self.start,
                x[0].len()
            )));
        }
        Tensor::new(self.shape.clone(), x[0].data()[self.start..end].to_vec())
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            add_into(&mut gx[self.start..self.start + g.len()], g);
        }
    }
}

pub(crate) struct Reshape {
    pub shape: Vec<usize>,
}

impl<T: Real> Op<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Tensor::new(self.shape.clone(), x[0].data().to_vec())
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            add_into(gx, g);
        }
    }
}

/// `Σ_k w[k] · x_k` over K same-shaped inputs; input 0 is the weight vector.
pub(crate) struct WeightedSum;

impl<T: Real> Op<T> for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let w = x[0].data();
        let items = &x[1..];
        if items.is_empty() || w.len() != items.len() {
            return Err(Error::contract(format!(
                "weighted_sum: {} weights for {} inputs",
                w.len(),
                items.len()
            )));
        }
        let shape = items[0].shape();
        let mut out = vec![T::zero(); items[0].len()];
        for (wk, item) in w.iter().zip(items) {
            if item.shape() != shape {
                return Err(Error::contract("weighted_sum: inputs differ in shape"));
            }
            if wk.is_zero() {
                continue;
            }
            out.iter_mut().zip(item.data()).for_each(|(o, v)| *o += *wk * *v);
        }
        Tensor::new(shape.to_vec(), out)
    }
    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let w = x[0].data();
        if let Some(gw) = grads[0].as_mut() {
            for (k, item) in x[1..].iter().enumerate() {
                let s: f64 = item.data().iter().zip(g).map(|(v, gi)| v.f64() * gi.f64()).sum();
                gw[k] += T::lit(s);
            }
        }
        for (k, slot) in grads[1..].iter_mut().enumerate() {
            if let Some(gx) = slot.as_mut() {
                let wk = w[k];
                gx.iter_mut().zip(g).for_each(|(a, gi)| *a += wk * *gi);
            }
        }
    }
}

/// `out[j] = Σ_{k : target[k] == j} x[k]` for `j < len`.
pub(crate) struct Regroup {
    pub target: Vec<usize>,
    pub len: usize,
}

impl<T: Real> Op<T> for Regroup {
    fn name(&self) -> &'static str {
        "regroup"
    }
    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let src = x[0].data();
        if src.len() != self.target.len() || self.target.iter().any(|&t| t >= self.len) {
            return Err(Error::contract("regroup: bad target map"));
        }
        let mut out = vec![T::zero(); self.len];
        for (k, &t) in self.target.iter().enumerate() {
            out[t] += src[k];
        }
        Ok(Tensor::vector(out))
    }
    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            for (k, &t) in self.target.iter().enumerate() {
                gx[k] += g[t];
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Mul, &[a, b])
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.apply(
            Affine {
                scale: T::lit(scale),
                shift: T::lit(shift),
            },
            &[x],
        )
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Sigmoid, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Relu, &[x])
    }

    pub fn clamp01(&mut self, x: Var) -> Result<Var> {
        self.apply(Clamp01, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Sum { mean: false }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Sum { mean: true }, &[x])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Dot, &[a, b])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Softmax, &[x])
    }

    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        self.apply(
            CrossEntropy {
                label,
                probs: Vec::new(),
            },
            &[logits],
        )
    }

    pub fn slice(&mut self, x: Var, start: usize, shape: &[usize]) -> Result<Var> {
        self.apply(
            Slice {
                start,
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    /// Element `i` of `x` as a one-element tensor.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice(x, i, &[1])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let mut inputs = Vec::with_capacity(items.len() + 1);
        inputs.push(weights);
        inputs.extend_from_slice(items);
        self.apply(WeightedSum, &inputs)
    }

    /// Sums `x` into `len` buckets, entry `k` landing in `target[k]`.
    pub fn regroup(&mut self, x: Var, target: Vec<usize>, len: usize) -> Result<Var> {
        self.apply(Regroup { target, len }, &[x])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax(&[0.0f32, 0.0, 0.0]).unwrap();
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_large_input_does_not_overflow() {
        let y = softmax(&[1000.0f32, 0.0, 0.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6);
        assert!(y[1] < 1e-30 && y[1] >= 0.0);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax::<f32>(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let loss = cross_entropy(&[0.5f32; 10], 3).unwrap();
        assert!((loss - 10f32.ln()).abs() < 1e-6);
        let mut logits = vec![0.0f32; 10];
        logits[4] = 1e6;
        assert!(cross_entropy(&logits, 4).unwrap() < 1e-6);
        assert!(matches!(cross_entropy(&logits, 10), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fan_out_accumulates_both_paths() {
        // y = x*x + 3x at x = 2  =>  dy/dx = 2x + 3 = 7
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::scalar(2.0));
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0).unwrap();
        let y = g.add(sq, lin).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn non_finite_output_is_reported_with_op() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::scalar(f32::MAX));
        let err = g.affine(x, 10.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Numeric { ref op, .. } if op == "affine"));
    }

    #[test]
    fn regroup_moves_mass() {
        let mut g = Graph::<f32>::new();
        let w = g.param(Tensor::vector(vec![0.6, 0.3, 0.04, 0.06]));
        let r = g.regroup(w, vec![0, 1, 3, 3], 4).unwrap();
        let out = g.value(r).data().to_vec();
        assert_eq!(out[2], 0.0);
        assert!((out[3] - 0.10).abs() < 1e-7);
    }
}
