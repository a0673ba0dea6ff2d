//! Adam with step-decayed learning rate.

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Learning rate halved every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecay {
    pub base: f64,
    pub every: usize,
    pub factor: f64,
}

impl StepDecay {
    pub fn halving(base: f64) -> Self {
        StepDecay {
            base,
            every: 10,
            factor: 0.5,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            return self.base;
        }
        self.base * self.factor.powi((epoch / self.every) as i32)
    }
}

/// First and second moments per parameter tensor, kept in f64.
#[derive(Clone, Debug)]
pub struct Adam {
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update of every tensor in `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::contract("adam: gradient layout differs from parameters"));
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((t, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                *p = (*p as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn two_steps_on_a_quadratic() {
        // f(x) = (x − 3)², x0 = 0, lr 0.1. Hand recurrence:
        // g1 = −6: m = −0.6, v = 0.036, m̂ = −6, v̂ = 36 → x1 = 0.1·6/(6+1e-8)
        let mut p = ParamSet::new();
        p.push("x", Tensor::vector(vec![0.0]));
        let mut adam = Adam::new(&p);
        let x0 = 0.0f64;
        let g1 = 2.0 * (x0 - 3.0);
        adam.step(&mut p, &[vec![g1]], 0.1).unwrap();
        let x1 = p.get("x").unwrap().data()[0] as f64;
        let want1 = x0 + 0.1 * 6.0 / (6.0 + 1e-8);
        assert!((x1 - want1).abs() < 1e-6, "{x1} vs {want1}");
        // g2 at x1: m = 0.9·(−0.6) + 0.1·g2, v = 0.999·0.036 + 0.001·g2².
        let g2 = 2.0 * (x1 - 3.0);
        let m = 0.9 * -0.6 + 0.1 * g2;
        let v = 0.999 * 0.036 + 0.001 * g2 * g2;
        let want2 = x1 - 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.998001)).sqrt() + 1e-8);
        adam.step(&mut p, &[vec![g2]], 0.1).unwrap();
        let x2 = p.get("x").unwrap().data()[0] as f64;
        assert!((x2 - want2).abs() < 1e-6, "{x2} vs {want2}");
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn decay_halves_every_ten_epochs() {
        let s = StepDecay::halving(1e-3);
        assert_eq!(s.at(0), 1e-3);
        assert_eq!(s.at(9), 1e-3);
        assert_eq!(s.at(10), 5e-4);
        assert_eq!(s.at(25), 2.5e-4);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::vector(vec![0.0, 1.0]));
        let mut adam = Adam::new(&p);
        assert!(adam.step(&mut p, &[vec![1.0]], 0.1).is_err());
    }
}
