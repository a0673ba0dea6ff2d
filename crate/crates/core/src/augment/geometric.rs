//! Bilinear warps about the image center: rotation and isotropic zoom.
//!
//! Samples outside the source image read as zero.

use crate::diffcore::{Op, Real, Tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Warp {
    /// Magnitude in degrees.
    Rotate,
    /// Zoom factor `1 + magnitude`.
    Scale,
}

impl Warp {
    /// Source coordinate of output pixel `(dx, dy)` (center-relative) and its
    /// derivative w.r.t. the magnitude.
    fn source<T: Real>(self, m: T, dx: T, dy: T) -> ((T, T), (T, T)) {
        match self {
            Warp::Rotate => {
                let k = T::lit(std::f64::consts::PI / 180.0);
                let (s, c) = (m * k).sin_cos();
                let sx = c * dx + s * dy;
                let sy = -s * dx + c * dy;
                let dsx = (-s * dx + c * dy) * k;
                let dsy = (-c * dx - s * dy) * k;
                ((sx, sy), (dsx, dsy))
            }
            Warp::Scale => {
                let f = T::one() + m;
                let inv = T::one() / f;
                let dinv = -inv * inv;
                ((dx * inv, dy * inv), (dx * dinv, dy * dinv))
            }
        }
    }
}

pub(crate) struct WarpOp {
    pub warp: Warp,
}

struct Tap<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

fn tap<T: Real>(sx: T, sy: T) -> Tap<T> {
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    Tap {
        x0: fx0.to_isize().unwrap_or(isize::MIN / 2),
        y0: fy0.to_isize().unwrap_or(isize::MIN / 2),
        fx: sx - fx0,
        fy: sy - fy0,
    }
}

#[inline]
fn read<T: Real>(plane: &[T], h: usize, w: usize, x: isize, y: isize) -> T {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

impl<T: Real> Op<T> for WarpOp {
    fn name(&self) -> &'static str {
        match self.warp {
            Warp::Rotate => "rotate",
            Warp::Scale => "scale",
        }
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (c, h, w) = x[0].chw()?;
        let m = x[1].item();
        if m.is_zero() {
            return Tensor::new(x[0].shape().to_vec(), x[0].data().to_vec());
        }
        let (cx, cy) = (T::lit((w as f64 - 1.0) / 2.0), T::lit((h as f64 - 1.0) / 2.0));
        let src = x[0].data();
        let mut out = vec![T::zero(); c * h * w];
        for y in 0..h {
            for xo in 0..w {
                let dx = T::lit(xo as f64) - cx;
                let dy = T::lit(y as f64) - cy;
                let ((sx, sy), _) = self.warp.source(m, dx, dy);
                let t = tap(sx + cx, sy + cy);
                let one = T::one();
                for ci in 0..c {
                    let p = &src[ci * h * w..(ci + 1) * h * w];
                    let v00 = read(p, h, w, t.x0, t.y0);
                    let v10 = read(p, h, w, t.x0 + 1, t.y0);
                    let v01 = read(p, h, w, t.x0, t.y0 + 1);
                    let v11 = read(p, h, w, t.x0 + 1, t.y0 + 1);
                    out[(ci * h + y) * w + xo] =
                        (one - t.fy) * ((one - t.fx) * v00 + t.fx * v10) + t.fy * ((one - t.fx) * v01 + t.fx * v11);
                }
            }
        }
        Tensor::new(x[0].shape().to_vec(), out)
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (c, h, w) = x[0].chw().expect("checked in forward");
        let m = x[1].item();
        let (cx, cy) = (T::lit((w as f64 - 1.0) / 2.0), T::lit((h as f64 - 1.0) / 2.0));
        let src = x[0].data();
        let one = T::one();
        let mut dm = T::zero();
        for y in 0..h {
            for xo in 0..w {
                let dx = T::lit(xo as f64) - cx;
                let dy = T::lit(y as f64) - cy;
                let ((sx, sy), (dsx, dsy)) = self.warp.source(m, dx, dy);
                let t = tap(sx + cx, sy + cy);
                for ci in 0..c {
                    let gi = g[(ci * h + y) * w + xo];
                    if gi.is_zero() {
                        continue;
                    }
                    if let Some(gx) = grads[0].as_mut() {
                        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
                        let taps = [
                            (t.x0, t.y0, (one - t.fx) * (one - t.fy)),
                            (t.x0 + 1, t.y0, t.fx * (one - t.fy)),
                            (t.x0, t.y0 + 1, (one - t.fx) * t.fy),
                            (t.x0 + 1, t.y0 + 1, t.fx * t.fy),
                        ];
                        for (px, py, wgt) in taps {
                            if px >= 0 && py >= 0 && px < w as isize && py < h as isize {
                                plane[py as usize * w + px as usize] += gi * wgt;
                            }
                        }
                    }
                    if grads[1].is_some() {
                        let p = &src[ci * h * w..(ci + 1) * h * w];
                        let v00 = read(p, h, w, t.x0, t.y0);
                        let v10 = read(p, h, w, t.x0 + 1, t.y0);
                        let v01 = read(p, h, w, t.x0, t.y0 + 1);
                        let v11 = read(p, h, w, t.x0 + 1, t.y0 + 1);
                        let d_sx = (one - t.fy) * (v10 - v00) + t.fy * (v11 - v01);
                        let d_sy = (one - t.fx) * (v01 - v00) + t.fx * (v11 - v10);
                        dm += gi * (d_sx * dsx + d_sy * dsy);
                    }
                }
            }
        }
        if let Some(gm) = grads[1].as_mut() {
            gm[0] += dm;
        }
    }
}
