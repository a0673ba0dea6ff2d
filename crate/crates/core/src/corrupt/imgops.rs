//! Plain (non-differentiable) image helpers shared by corruptions and mixing.

use crate::diffcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Fill {
    Zero,
    Edge,
}

fn at(plane: &[f32], h: usize, w: usize, x: isize, y: isize, fill: Fill) -> f32 {
    match fill {
        Fill::Zero if x < 0 || y < 0 || x >= w as isize || y >= h as isize => 0.0,
        _ => {
            let x = x.clamp(0, w as isize - 1) as usize;
            let y = y.clamp(0, h as isize - 1) as usize;
            plane[y * w + x]
        }
    }
}

pub(crate) fn bilinear(plane: &[f32], h: usize, w: usize, sx: f32, sy: f32, fill: Fill) -> f32 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let (fx, fy) = (sx - x0, sy - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let v00 = at(plane, h, w, x0, y0, fill);
    let v10 = at(plane, h, w, x0 + 1, y0, fill);
    let v01 = at(plane, h, w, x0, y0 + 1, fill);
    let v11 = at(plane, h, w, x0 + 1, y0 + 1, fill);
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
}

/// Resamples every channel through `src(x, y) -> (sx, sy)`.
pub(crate) fn warp(img: &Tensor, fill: Fill, src: impl Fn(f32, f32) -> (f32, f32)) -> Tensor {
    let (c, h, w) = img.chw().expect("image tensor");
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f32, y as f32);
            for ci in 0..c {
                let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
                out[(ci * h + y) * w + x] = bilinear(plane, h, w, sx, sy, fill);
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Per-channel 2-D correlation with replicated borders.
pub(crate) fn convolve(img: &Tensor, kernel: &[f32], kh: usize, kw: usize) -> Tensor {
    let (c, h, w) = img.chw().expect("image tensor");
    let (py, px) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        let plane = &img.data()[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let k = kernel[ky * kw + kx];
                        if k != 0.0 {
                            let sy = y as isize + ky as isize - py;
                            let sx = x as isize + kx as isize - px;
                            acc += k * at(plane, h, w, sx, sy, Fill::Edge);
                        }
                    }
                }
                out[(ci * h + y) * w + x] = acc;
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Separable Gaussian blur.
pub(crate) fn gaussian_blur(img: &Tensor, sigma: f32) -> Tensor {
    let r = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f32> = (0..2 * r + 1)
        .map(|i| {
            let d = i as f32 - r as f32;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let tmp = convolve(img, &k, 1, k.len());
    convolve(&tmp, &k, k.len(), 1)
}

pub(crate) fn map(img: &Tensor, mut f: impl FnMut(f32) -> f32) -> Tensor {
    Tensor::new(img.shape().to_vec(), img.data().iter().map(|v| f(*v)).collect()).expect("same shape")
}

pub(crate) fn clamp01(img: Tensor) -> Tensor {
    map(&img, |v| v.clamp(0.0, 1.0))
}

/// Per-pixel luma plane.
pub(crate) fn gray(img: &Tensor) -> Vec<f32> {
    let (_, h, w) = img.chw().expect("image tensor");
    let hw = h * w;
    let d = img.data();
    (0..hw)
        .map(|i| 0.299 * d[i] + 0.587 * d[hw + i] + 0.114 * d[2 * hw + i])
        .collect()
}

/// `base + f·(x − base)` per pixel, with `base` the luma plane.
pub(crate) fn lerp_gray(img: &Tensor, f: f32) -> Tensor {
    let (c, h, w) = img.chw().expect("image tensor");
    let g = gray(img);
    let mut out = img.data().to_vec();
    for ci in 0..c {
        for (i, v) in out[ci * h * w..(ci + 1) * h * w].iter_mut().enumerate() {
            *v = g[i] + f * (*v - g[i]);
        }
    }
    Tensor::new(img.shape().to_vec(), out).expect("same shape")
}

/// Mean absolute difference of two equally shaped images.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / a.len() as f64
}
