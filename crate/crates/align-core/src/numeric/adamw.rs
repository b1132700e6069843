//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numeric::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub hyper: AdamWHyper,
}

impl AdamWState {
    pub fn new(params: &[Tensor], hyper: AdamWHyper) -> Result<Self> {
        if hyper.lr < 0.0 {
            return Err(CoreError::contract("adamw: negative learning rate"));
        }
        Ok(AdamWState {
            step: 0,
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            hyper,
        })
    }
}

/// One AdamW update over a parameter list. Weight decay is decoupled:
/// `p <- p - lr * wd * p` before the moment-based step. Bias correction
/// uses the incremented step count.
pub fn adamw_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamWState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CoreError::contract(format!(
            "adamw_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(CoreError::contract(format!(
                "adamw_step: shape mismatch param {:?} grad {:?} m {:?} v {:?}",
                p.shape(),
                g.shape(),
                m.shape(),
                v.shape()
            )));
        }
    }

    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);

    for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let p = p.data_mut();
        let g = g.data();
        for i in 0..p.len() {
            p[i] -= h.lr * h.weight_decay * p[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}
