//! Convolution, pooling and dense layers on single `C×H×W` samples.

use super::real::Real;
use super::tape::{Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Same-padded, stride-1 2-D convolution with an odd square kernel.
pub(crate) struct Conv2d<T> {
    cols: Vec<T>,
    dims: (usize, usize, usize, usize, usize),
}

impl<T> Conv2d<T> {
    pub fn new() -> Self {
        Conv2d {
            cols: Vec::new(),
            dims: (0, 0, 0, 0, 0),
        }
    }
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let line = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, out) in line.iter_mut().enumerate() {
                        let sx = xo as isize + dx;
                        *out = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, gx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut gx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for xo in 0..w {
                        let sx = xo as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Op<T> for Conv2d<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (c, h, w) = x[0].chw()?;
        let (cout, k) = match x[1].shape() {
            [o, i, kh, kw] if *i == c && kh == kw && kh % 2 == 1 => (*o, *kh),
            s => {
                return Err(Error::contract(format!(
                    "conv2d: weight shape {s:?} incompatible with {c} input channels"
                )))
            }
        };
        if x[2].len() != cout {
            return Err(Error::contract("conv2d: bias length differs from out channels"));
        }
        let hw = h * w;
        let ckk = c * k * k;
        self.cols = vec![T::zero(); ckk * hw];
        im2col(x[0].data(), c, h, w, k, &mut self.cols);
        let mut out = vec![T::zero(); cout * hw];
        for (o, b) in x[2].data().iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(*b);
        }
        T::gemm(
            cout,
            ckk,
            hw,
            x[1].data(),
            (ckk, 1),
            &self.cols,
            (hw, 1),
            T::one(),
            &mut out,
        );
        self.dims = (c, h, w, cout, k);
        Tensor::new(vec![cout, h, w], out)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (c, h, w, cout, k) = self.dims;
        let hw = h * w;
        let ckk = c * k * k;
        if let Some(gw) = grads[1].as_mut() {
            // dW += G · colsᵀ
            T::gemm(cout, hw, ckk, g, (hw, 1), &self.cols, (1, hw), T::one(), gw);
        }
        if let Some(gb) = grads[2].as_mut() {
            for (o, acc) in gb.iter_mut().enumerate() {
                *acc += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if let Some(gx) = grads[0].as_mut() {
            // dcols = Wᵀ · G
            let mut dcols = vec![T::zero(); ckk * hw];
            T::gemm(ckk, cout, hw, x[1].data(), (1, ckk), g, (hw, 1), T::zero(), &mut dcols);
            col2im_add(&dcols, c, h, w, k, gx);
        }
    }
}

/// 2×2 max pooling with stride 2. Ties resolve to the first maximum.
pub(crate) struct MaxPool2 {
    argmax: Vec<usize>,
}

impl<T: Real> Op<T> for MaxPool2 {
    fn name(&self) -> &'static str {
        "max_pool2"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (c, h, w) = x[0].chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::contract(format!("max_pool2 needs even H, W; got {h}×{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = x[0].data();
        let mut out = Vec::with_capacity(c * oh * ow);
        self.argmax = Vec::with_capacity(c * oh * ow);
        for ci in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = ci * h * w + 2 * y * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ci * h * w + (2 * y + dy) * w + 2 * xo + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    self.argmax.push(best);
                }
            }
        }
        Tensor::new(vec![c, oh, ow], out)
    }

    fn vjp(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            for (gi, &idx) in g.iter().zip(&self.argmax) {
                gx[idx] += *gi;
            }
        }
    }
}

pub(crate) struct GlobalAvgPool;

impl<T: Real> Op<T> for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (c, h, w) = x[0].chw()?;
        let hw = h * w;
        let out = x[0]
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() / T::lit(hw as f64))
            .collect();
        Tensor::new(vec![c], out)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        if let Some(gx) = grads[0].as_mut() {
            let hw = x[0].len() / g.len();
            for (plane, gi) in gx.chunks_mut(hw).zip(g) {
                let d = *gi / T::lit(hw as f64);
                plane.iter_mut().for_each(|a| *a += d);
            }
        }
    }
}

/// `y = W · flatten(x) + b` with `W: [out, in]`.
pub(crate) struct Linear;

impl<T: Real> Op<T> for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let n = x[0].len();
        let out = match x[1].shape() {
            [o, i] if *i == n => *o,
            s => {
                return Err(Error::contract(format!(
                    "linear: weight shape {s:?} incompatible with {n} inputs"
                )))
            }
        };
        if x[2].len() != out {
            return Err(Error::contract("linear: bias length differs from outputs"));
        }
        let mut y = x[2].data().to_vec();
        T::gemm(out, n, 1, x[1].data(), (n, 1), x[0].data(), (1, 1), T::one(), &mut y);
        Tensor::new(vec![out], y)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let n = x[0].len();
        let out = g.len();
        if let Some(gw) = grads[1].as_mut() {
            for (o, gi) in g.iter().enumerate() {
                let row = &mut gw[o * n..(o + 1) * n];
                row.iter_mut().zip(x[0].data()).for_each(|(a, v)| *a += *gi * *v);
            }
        }
        if let Some(gb) = grads[2].as_mut() {
            gb.iter_mut().zip(g).for_each(|(a, b)| *a += *b);
        }
        if let Some(gx) = grads[0].as_mut() {
            T::gemm(n, out, 1, x[1].data(), (1, n), g, (1, 1), T::one(), gx);
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        self.apply(Conv2d::new(), &[x, weight, bias])
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        self.apply(MaxPool2 { argmax: Vec::new() }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.apply(GlobalAvgPool, &[x])
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        self.apply(Linear, &[x, weight, bias])
    }
}
