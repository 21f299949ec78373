//! Adam optimizer over a model's parameter list.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::Param;
use crate::real::Real;
use crate::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new<T: Real>(cfg: AdamConfig, params: &[Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0f32; p.value.len()]).collect();
        Self { cfg, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update; `grads[i]` belongs to `params[i]` and `None` means no gradient.
    pub fn step<T: Real>(&mut self, params: &mut [Param<T>], grads: &[Option<Vec<T>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = c.lr / bc1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if g.len() != p.value.len() {
                return Err(Error::ShapeMismatch(alloc::format!("gradient for {}", p.name)));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.to_f64_lossy();
                let mn = c.beta1 * *mi as f64 + (1.0 - c.beta1) * gi;
                let vn = c.beta2 * *vi as f64 + (1.0 - c.beta2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let upd = step_size * mn / (num_traits::Float::sqrt(vn / bc2) + c.eps);
                *w -= T::of(upd);
            }
        }
        Ok(())
    }
}
