//! Exact analytic backward pass.
//!
//! The caller supplies the gradient of a scalar loss with respect to each
//! head's output (`d_out`); `backward` chains it through the head activation,
//! the head affine layer, and optionally the trunk. Trunk gradients are the
//! sum of the supplied per-task contributions, so any weighting is applied by
//! scaling `d_out` before the call.

use ndarray::{Array1, Array2, Axis};

use super::forward::ForwardCache;
use super::params::{Activation, DenseLayer, MtlNetwork};
use crate::error::{Error, Result};

/// Which parameter groups a backward pass should produce gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Only the head of the given task.
    Head(usize),
    /// Only the shared trunk.
    Shared,
    /// Heads (for every supplied `d_out`) and the shared trunk.
    Both,
}

/// Gradients for one dense layer, shape-congruent with the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            weights: Array2::zeros(layer.weights.dim()),
            bias: Array1::zeros(layer.bias.len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Gradients of a scalar loss with respect to network parameters. Slots not
/// requested by the scope are `None`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub scope: GradScope,
    /// Trunk gradients in layer order.
    pub shared: Option<Vec<LayerGrads>>,
    /// Per-task head gradients (single-layer heads carry one entry).
    pub heads: Vec<Option<Vec<LayerGrads>>>,
}

/// Backpropagates the supplied head-output gradients.
///
/// `d_out[t]` is the `[n × 2]` gradient of the loss with respect to head `t`'s
/// output, or `None` when task `t` does not participate. The result holds
/// exact gradients of the scalar loss whose output-gradient was supplied.
pub fn backward(
    net: &MtlNetwork,
    cache: &ForwardCache,
    d_out: &[Option<Array2<f64>>],
    scope: GradScope,
) -> Result<Gradients> {
    cache.matches(net)?;
    if d_out.len() != net.n_tasks() {
        return Err(Error::Shape(format!(
            "d_out has {} entries for {} tasks",
            d_out.len(),
            net.n_tasks()
        )));
    }
    let n = cache.batch_size();
    for (t, d) in d_out.iter().enumerate() {
        if let Some(d) = d {
            if d.dim() != (n, 2) {
                return Err(Error::Cache(format!(
                    "d_out[{t}] has shape {:?}, cache batch is {n} rows",
                    d.dim()
                )));
            }
        }
    }
    if let GradScope::Head(t) = scope {
        if t >= net.n_tasks() {
            return Err(Error::Shape(format!("task {t} out of range")));
        }
        if d_out[t].is_none() {
            return Err(Error::Contract(format!(
                "scope Head({t}) needs d_out[{t}]"
            )));
        }
    }

    let trunk_out = cache.trunk_output();
    let h = trunk_out.ncols();
    let want_shared = !matches!(scope, GradScope::Head(_));
    let want_head = |t: usize| match scope {
        GradScope::Head(u) => u == t,
        GradScope::Shared => false,
        GradScope::Both => true,
    };

    let mut heads: Vec<Option<Vec<LayerGrads>>> = vec![None; net.n_tasks()];
    let mut d_trunk_out: Array2<f64> = Array2::zeros((n, h));

    for (t, d) in d_out.iter().enumerate() {
        let Some(d) = d else { continue };
        if matches!(scope, GradScope::Head(u) if u != t) {
            continue;
        }
        let layer = &net.heads[t].layers[0];
        let d_pre = activation_backward(
            layer.activation,
            &cache.head_pre[t],
            &cache.head_out[t],
            d,
        );
        if want_head(t) {
            heads[t] = Some(vec![LayerGrads {
                weights: d_pre.t().dot(&trunk_out),
                bias: d_pre.sum_axis(Axis(0)),
            }]);
        }
        if want_shared {
            d_trunk_out = d_trunk_out + d_pre.dot(&layer.weights);
        }
    }

    let shared = if want_shared {
        Some(trunk_backward(net, cache, d_trunk_out))
    } else {
        None
    };

    Ok(Gradients {
        scope,
        shared,
        heads,
    })
}

fn trunk_backward(net: &MtlNetwork, cache: &ForwardCache, d_out: Array2<f64>) -> Vec<LayerGrads> {
    let n_layers = net.shared.layers.len();
    let mut grads: Vec<Option<LayerGrads>> = (0..n_layers).map(|_| None).collect();
    let mut d_act = d_out;
    for k in (0..n_layers).rev() {
        let layer = &net.shared.layers[k];
        let d_pre = activation_backward(layer.activation, &cache.trunk_pre[k], &cache.trunk_act[k], &d_act);
        let input = if k == 0 {
            cache.input.view()
        } else {
            cache.trunk_act[k - 1].view()
        };
        grads[k] = Some(LayerGrads {
            weights: d_pre.t().dot(&input),
            bias: d_pre.sum_axis(Axis(0)),
        });
        if k > 0 {
            d_act = d_pre.dot(&layer.weights);
        }
    }
    grads.into_iter().map(|g| g.expect("filled")).collect()
}

/// Chains a gradient w.r.t. layer outputs back through the activation.
fn activation_backward(
    activation: Activation,
    pre: &Array2<f64>,
    out: &Array2<f64>,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    match activation {
        Activation::Identity => d_out.clone(),
        Activation::ReLU => {
            let mut d = d_out.clone();
            d.zip_mut_with(pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            d
        }
        Activation::Softmax2 => {
            // dz_j = p_j * (d_j - sum_k d_k p_k) per row.
            let mut d = Array2::zeros(d_out.dim());
            for i in 0..d_out.nrows() {
                let dot: f64 = (0..d_out.ncols()).map(|k| d_out[(i, k)] * out[(i, k)]).sum();
                for j in 0..d_out.ncols() {
                    d[(i, j)] = out[(i, j)] * (d_out[(i, j)] - dot);
                }
            }
            d
        }
    }
}

/// L2 norm over one layer's gradient entries (weights and bias).
pub fn l2_norm(layer: &LayerGrads) -> f64 {
    let sum: f64 = layer.weights.iter().map(|v| v * v).sum::<f64>()
        + layer.bias.iter().map(|v| v * v).sum::<f64>();
    sum.sqrt()
}

/// L2 norm over a stack of layer gradients.
pub fn l2_norm_layers(layers: &[LayerGrads]) -> f64 {
    let sum: f64 = layers
        .iter()
        .map(|l| {
            l.weights.iter().map(|v| v * v).sum::<f64>()
                + l.bias.iter().map(|v| v * v).sum::<f64>()
        })
        .sum();
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, mlp_init};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let net = mlp_init(&[3, 4], 2, 11).unwrap();
        let x = array![[0.2, -0.4, 1.0], [1.5, 0.3, -0.2]];
        let (_, cache) = forward(&net, x.view()).unwrap();
        let d_out = vec![Some(Array2::zeros((2, 2))), Some(Array2::zeros((2, 2)))];
        let grads = backward(&net, &cache, &d_out, GradScope::Both).unwrap();
        for head in grads.heads.iter().flatten() {
            assert!(head.iter().all(|g| g.weights.iter().all(|&v| v == 0.0)));
        }
        for layer in grads.shared.unwrap() {
            assert!(layer.weights.iter().all(|&v| v == 0.0));
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn head_scope_leaves_shared_empty() {
        let net = mlp_init(&[3, 4], 2, 11).unwrap();
        let x = array![[0.2, -0.4, 1.0]];
        let (_, cache) = forward(&net, x.view()).unwrap();
        let d_out = vec![Some(array![[0.3, -0.3]]), None];
        let grads = backward(&net, &cache, &d_out, GradScope::Head(0)).unwrap();
        assert!(grads.shared.is_none());
        assert!(grads.heads[0].is_some());
        assert!(grads.heads[1].is_none());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let net = mlp_init(&[3, 4], 2, 11).unwrap();
        let other = mlp_init(&[3, 4, 4], 2, 11).unwrap();
        let x = array![[0.2, -0.4, 1.0]];
        let (_, cache) = forward(&other, x.view()).unwrap();
        let d_out = vec![Some(array![[0.3, -0.3]]), None];
        assert!(matches!(
            backward(&net, &cache, &d_out, GradScope::Both),
            Err(Error::Cache(_))
        ));
    }

    /// Central finite differences of an arbitrary scalar function of the
    /// head outputs, checked against the analytic chain rule.
    #[test]
    fn matches_finite_differences_on_small_net() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        // ~30 parameters: trunk 2x3 + 3, heads 2x(3+1) each.
        let mut net = mlp_init(&[2, 3], 2, 7).unwrap();
        let x = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        // Loss: weighted sum of all head outputs with fixed coefficients.
        let coeff: Vec<Array2<f64>> =
            (0..2).map(|_| Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0))).collect();
        let loss = |net: &crate::nn::MtlNetwork| -> f64 {
            let (out, _) = forward(net, x.view()).unwrap();
            out.iter()
                .zip(&coeff)
                .map(|(p, c)| (p * c).sum())
                .sum()
        };

        let (_, cache) = forward(&net, x.view()).unwrap();
        let d_out: Vec<Option<Array2<f64>>> = coeff.iter().map(|c| Some(c.clone())).collect();
        let grads = backward(&net, &cache, &d_out, GradScope::Both).unwrap();

        let h = 1e-5;
        let check = |analytic: f64, numeric: f64| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-7);
            assert!(
                ((analytic - numeric) / denom).abs() < 1e-5,
                "analytic {analytic} vs numeric {numeric}"
            );
        };

        // Trunk weights.
        let shared = grads.shared.as_ref().unwrap();
        for k in 0..net.shared.layers.len() {
            for idx in 0..net.shared.layers[k].weights.len() {
                let (r, c) = (idx / net.shared.layers[k].weights.ncols(), idx % net.shared.layers[k].weights.ncols());
                let orig = net.shared.layers[k].weights[(r, c)];
                net.shared.layers[k].weights[(r, c)] = orig + h;
                let up = loss(&net);
                net.shared.layers[k].weights[(r, c)] = orig - h;
                let down = loss(&net);
                net.shared.layers[k].weights[(r, c)] = orig;
                check(shared[k].weights[(r, c)], (up - down) / (2.0 * h));
            }
        }
        // Head weights and biases.
        for t in 0..2 {
            let head = grads.heads[t].as_ref().unwrap();
            for idx in 0..net.heads[t].layers[0].weights.len() {
                let (r, c) = (idx / 3, idx % 3);
                let orig = net.heads[t].layers[0].weights[(r, c)];
                net.heads[t].layers[0].weights[(r, c)] = orig + h;
                let up = loss(&net);
                net.heads[t].layers[0].weights[(r, c)] = orig - h;
                let down = loss(&net);
                net.heads[t].layers[0].weights[(r, c)] = orig;
                check(head[0].weights[(r, c)], (up - down) / (2.0 * h));
            }
            for b in 0..2 {
                let orig = net.heads[t].layers[0].bias[b];
                net.heads[t].layers[0].bias[b] = orig + h;
                let up = loss(&net);
                net.heads[t].layers[0].bias[b] = orig - h;
                let down = loss(&net);
                net.heads[t].layers[0].bias[b] = orig;
                check(head[0].bias[b], (up - down) / (2.0 * h));
            }
        }
    }

    #[test]
    fn l2_norm_basics() {
        let layer = LayerGrads {
            weights: array![[3.0], [0.0]],
            bias: array![4.0, 0.0],
        };
        assert_eq!(l2_norm(&layer), 5.0);
        let zero = LayerGrads {
            weights: Array2::zeros((2, 2)),
            bias: Array1::zeros(2),
        };
        assert_eq!(l2_norm(&zero), 0.0);
    }

    proptest! {
        /// Homogeneity: ||c * g|| = |c| * ||g||.
        #[test]
        fn l2_norm_is_homogeneous(
            vals in proptest::collection::vec(-10.0f64..10.0, 6),
            c in -5.0f64..5.0,
        ) {
            let layer = LayerGrads {
                weights: Array2::from_shape_vec((2, 2), vals[..4].to_vec()).unwrap(),
                bias: Array1::from_vec(vals[4..].to_vec()),
            };
            let scaled = LayerGrads {
                weights: layer.weights.mapv(|v| c * v),
                bias: layer.bias.mapv(|v| c * v),
            };
            let lhs = l2_norm(&scaled);
            let rhs = c.abs() * l2_norm(&layer);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}
