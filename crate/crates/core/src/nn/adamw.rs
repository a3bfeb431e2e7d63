//! Decoupled-weight-decay Adam (AdamW).

use ndarray::{Array1, Array2};

use super::backward::LayerGrads;
use super::params::DenseParams;
use crate::error::{Error, Result};

/// First/second moment accumulators for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    pub m_weights: Array2<f64>,
    pub v_weights: Array2<f64>,
    pub m_bias: Array1<f64>,
    pub v_bias: Array1<f64>,
}

/// Optimizer state for one parameter group (a `DenseParams` stack).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub layers: Vec<LayerMoments>,
    pub step: u64,
}

impl AdamWState {
    pub fn zeros_like(params: &DenseParams) -> Self {
        AdamWState {
            layers: params
                .layers
                .iter()
                .map(|l| LayerMoments {
                    m_weights: Array2::zeros(l.weights.dim()),
                    v_weights: Array2::zeros(l.weights.dim()),
                    m_bias: Array1::zeros(l.bias.len()),
                    v_bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
            step: 0,
        }
    }
}

/// One AdamW step over a parameter group.
///
/// Weight decay is decoupled: it scales the parameters directly and never
/// enters the moment estimates. Moments are bias-corrected with the group's
/// step counter, which this call increments.
pub fn adamw_step(
    params: &mut DenseParams,
    state: &mut AdamWState,
    grads: &[LayerGrads],
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate {lr} must be positive")));
    }
    if grads.len() != params.layers.len() || state.layers.len() != params.layers.len() {
        return Err(Error::Shape(format!(
            "gradient stack has {} layers, parameters have {}",
            grads.len(),
            params.layers.len()
        )));
    }
    for (k, (layer, grad)) in params.layers.iter().zip(grads).enumerate() {
        if grad.weights.dim() != layer.weights.dim() || grad.bias.len() != layer.bias.len() {
            return Err(Error::Shape(format!("gradient shape mismatch at layer {k}")));
        }
        if !grad.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient entries at layer {k}"
            )));
        }
    }

    state.step += 1;
    let (beta1, beta2) = betas;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);

    for ((layer, moments), grad) in params.layers.iter_mut().zip(&mut state.layers).zip(grads) {
        update_tensor(
            layer.weights.as_slice_mut().expect("contiguous"),
            moments.m_weights.as_slice_mut().expect("contiguous"),
            moments.v_weights.as_slice_mut().expect("contiguous"),
            grad.weights.as_slice().expect("contiguous"),
            lr,
            beta1,
            beta2,
            bc1,
            bc2,
            eps,
            weight_decay,
        );
        update_tensor(
            layer.bias.as_slice_mut().expect("contiguous"),
            moments.m_bias.as_slice_mut().expect("contiguous"),
            moments.v_bias.as_slice_mut().expect("contiguous"),
            grad.bias.as_slice().expect("contiguous"),
            lr,
            beta1,
            beta2,
            bc1,
            bc2,
            eps,
            weight_decay,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grads: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    bc1: f64,
    bc2: f64,
    eps: f64,
    weight_decay: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * weight_decay * params[i];
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
