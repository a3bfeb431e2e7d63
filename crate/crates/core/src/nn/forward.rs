//! Batched forward pass with cached pre-activations for the backward pass.

use ndarray::{Array2, ArrayView2, Axis};

use super::params::{Activation, DenseLayer, DenseParams, MtlNetwork};
use crate::error::{Error, Result};

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    /// Pre-activations per trunk layer.
    pub trunk_pre: Vec<Array2<f64>>,
    /// Activations per trunk layer.
    pub trunk_act: Vec<Array2<f64>>,
    /// Pre-activations per head, `[n × 2]`.
    pub head_pre: Vec<Array2<f64>>,
    /// Head outputs (probabilities for Softmax2 heads), `[n × 2]`.
    pub head_out: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// The trunk output the heads consumed.
    pub fn trunk_output(&self) -> ArrayView2<'_, f64> {
        self.trunk_act
            .last()
            .map(Array2::view)
            .unwrap_or_else(|| self.input.view())
    }

    pub(super) fn matches(&self, net: &MtlNetwork) -> Result<()> {
        if self.trunk_pre.len() != net.shared.layers.len()
            || self.head_pre.len() != net.n_tasks()
            || self.input.ncols() != net.input_dim()
        {
            return Err(Error::Cache(format!(
                "cache built for {} trunk layers / {} heads / input {}, network has {} / {} / {}",
                self.trunk_pre.len(),
                self.head_pre.len(),
                self.input.ncols(),
                net.shared.layers.len(),
                net.n_tasks(),
                net.input_dim()
            )));
        }
        Ok(())
    }
}

/// Runs the trunk and every head on a batch `X = [n × d]`.
///
/// Returns one `[n × 2]` output per task plus the cache. For Softmax2 heads
/// each output row sums to 1 and column 1 is the probability of class 1.
pub fn forward(net: &MtlNetwork, x: ArrayView2<'_, f64>) -> Result<(Vec<Array2<f64>>, ForwardCache)> {
    if x.ncols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            net.input_dim()
        )));
    }

    let input = x.to_owned();
    let mut trunk_pre = Vec::with_capacity(net.shared.layers.len());
    let mut trunk_act = Vec::with_capacity(net.shared.layers.len());
    let mut current = input.clone();
    for layer in &net.shared.layers {
        let pre = affine(layer, &current);
        let act = activate(layer.activation, &pre);
        trunk_pre.push(pre);
        current = act.clone();
        trunk_act.push(act);
    }

    let mut head_pre = Vec::with_capacity(net.n_tasks());
    let mut head_out = Vec::with_capacity(net.n_tasks());
    for head in &net.heads {
        let layer = head_layer(head)?;
        let pre = affine(layer, &current);
        let out = activate(layer.activation, &pre);
        head_pre.push(pre);
        head_out.push(out);
    }

    let cache = ForwardCache {
        input,
        trunk_pre,
        trunk_act,
        head_pre,
        head_out: head_out.clone(),
    };
    Ok((head_out, cache))
}

fn head_layer(head: &DenseParams) -> Result<&DenseLayer> {
    match head.layers.as_slice() {
        [layer] => Ok(layer),
        _ => Err(Error::Shape("head must be a single layer".to_string())),
    }
}

fn affine(layer: &DenseLayer, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&layer.weights.t()) + &layer.bias
}

pub(super) fn activate(activation: Activation, pre: &Array2<f64>) -> Array2<f64> {
    match activation {
        Activation::ReLU => pre.mapv(|v| v.max(0.0)),
        Activation::Identity => pre.clone(),
        Activation::Softmax2 => softmax_rows(pre),
    }
}

/// Row-wise softmax with max-subtraction so large logits cannot overflow.
fn softmax_rows(pre: &Array2<f64>) -> Array2<f64> {
    let mut out = pre.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
