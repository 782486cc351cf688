//! Adaptive-moment optimizer with bias correction and global-norm clipping.

use crate::config::TrainConfig;
use crate::{Error, Result};

use super::{Grads, NetworkModel};

/// First/second moment state for one model.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    t: u64,
}

impl AdamState {
    pub fn new(model: &NetworkModel) -> Self {
        let zeros: Vec<Vec<Vec<f64>>> = model
            .layers
            .iter()
            .map(|l| l.param_slices().iter().map(|s| vec![0.0; s.len()]).collect())
            .collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. Non-finite gradients reject the step without
    /// touching parameters or state.
    pub fn step(
        &mut self,
        model: &mut NetworkModel,
        grads: &Grads,
        cfg: &TrainConfig,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::TrainingDiverged("non-finite gradient".into()));
        }
        let norm = grads.global_norm();
        let clip = if norm > cfg.grad_clip_norm { cfg.grad_clip_norm / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            for (ti, param) in layer.param_slices_mut().into_iter().enumerate() {
                let g = &grads.layers[li][ti];
                let m = &mut self.m[li][ti];
                let v = &mut self.v[li][ti];
                for i in 0..param.len() {
                    let gi = g[i] * clip;
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
        Ok(())
    }
}
