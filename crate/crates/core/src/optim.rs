//! Adam optimizer over named parameters.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A learnable tensor with a persistent gradient accumulator. The graph is
/// rebuilt every forward pass, so gradients are copied back here after each
/// backward sweep and zeroed by the caller between optimizer steps.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<Real>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = vec![0.0; value.numel()];
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn accumulate(&mut self, delta: &[Real]) {
        debug_assert_eq!(delta.len(), self.grad.len());
        for (g, d) in self.grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

/// Bias-corrected Adam state. `m` and `v` are allocated on the first step
/// and stay shape-aligned with the parameter list from then on.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
}

impl AdamState {
    pub fn new(lr: Real) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update over `params`, reading each parameter's accumulated
/// gradient (optionally scaled by `grad_scale`, e.g. 1/k for k-impression
/// accumulation windows). Gradients are not zeroed here.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState, grad_scale: Real) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.grad.len()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.grad.len()]).collect();
    }
    debug_assert_eq!(state.m.len(), params.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (pi, p) in params.iter_mut().enumerate() {
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        debug_assert_eq!(m.len(), p.grad.len());
        for (ci, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = p.grad[ci] * grad_scale;
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
            }
            m[ci] = state.beta1 * m[ci] + (1.0 - state.beta1) * g;
            v[ci] = state.beta2 * v[ci] + (1.0 - state.beta2) * g * g;
            let m_hat = m[ci] / bc1;
            let v_hat = v[ci] / bc2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
