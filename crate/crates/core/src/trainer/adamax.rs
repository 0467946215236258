use crate::engine::{Gradients, ParamSet};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adamax accumulators, one slot per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamaxState {
    pub m: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub t: i32,
}

impl AdamaxState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.ids().map(|id| vec![0.0; params.get(id).numel()]).collect::<Vec<_>>();
        AdamaxState {
            m: zeros(),
            u: zeros(),
            t: 0,
        }
    }

    /// One update:
    ///
    /// ```text
    /// m <- b1 m + (1 - b1) g
    /// u <- max(b2 u, |g|)
    /// theta <- theta - (lr / (1 - b1^t)) m / (u + eps)
    /// ```
    ///
    /// Parameters without a gradient see `g = 0`. Frozen rows are skipped.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) -> Result<()> {
        for (id, g) in grads.iter() {
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {} at element {bad}",
                    params.name(id)
                )));
            }
        }
        self.t += 1;
        let step = lr / (1.0 - BETA1.powi(self.t));
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id);
            let frozen = params.frozen_rows(id).to_vec();
            let t = params.get_mut(id);
            let cols = if t.shape().len() == 2 { t.shape()[1] } else { t.numel() };
            let (m, u) = (&mut self.m[i], &mut self.u[i]);
            for (k, theta) in t.data_mut().iter_mut().enumerate() {
                if frozen.get(k / cols).copied().unwrap_or(false) {
                    continue;
                }
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                u[k] = (BETA2 * u[k]).max(gk.abs());
                *theta -= step * m[k] / (u[k] + EPS);
            }
        }
        Ok(())
    }
}

/// `lr0 * 0.5^floor((epoch - 1) / halving)` for 1-based epochs.
pub fn learning_rate(lr0: f64, halving: usize, epoch: usize) -> f64 {
    let k = (epoch.max(1) - 1) / halving.max(1);
    lr0 * 0.5f64.powi(k as i32)
}
