//! Parameter containers and initialization.

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::adamw::AdamWState;
use crate::error::{Error, Result};

/// Element-wise activation of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    /// Two-way softmax; only valid as the final activation of a 2-unit head.
    Softmax2,
    Identity,
}

/// A dense affine layer `y = act(W x + b)` with `W` stored row-major
/// as `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }
}

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseParams {
    pub layers: Vec<DenseLayer>,
}

impl DenseParams {
    /// Checks that consecutive layer dimensions chain and that Softmax2 only
    /// appears as the final activation of a 2-unit layer.
    pub fn validate(&self) -> Result<()> {
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.activation == Activation::Softmax2
                && (k + 1 != self.layers.len() || layer.out_dim() != 2)
            {
                return Err(Error::Config(format!(
                    "Softmax2 at layer {k} must be the final activation of a 2-unit layer"
                )));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(DenseLayer::in_dim)
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.layers.last().map(DenseLayer::out_dim)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

/// Per-parameter-group AdamW state for a multi-task network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub shared: AdamWState,
    pub heads: Vec<AdamWState>,
}

/// Hard-parameter-sharing multi-task network: a shared ReLU trunk, one
/// single-layer head per task, and GradNorm task weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlNetwork {
    pub shared: DenseParams,
    pub heads: Vec<DenseParams>,
    pub task_weights: Vec<f64>,
    pub opt_state: OptState,
    input_dim: usize,
}

impl MtlNetwork {
    /// Reassembles a network from raw parts (for checkpoint loading).
    pub fn from_parts(
        shared: DenseParams,
        heads: Vec<DenseParams>,
        task_weights: Vec<f64>,
        opt_state: OptState,
        input_dim: usize,
    ) -> Result<Self> {
        shared.validate()?;
        if heads.is_empty() || task_weights.len() != heads.len() {
            return Err(Error::Shape(format!(
                "{} heads but {} task weights",
                heads.len(),
                task_weights.len()
            )));
        }
        let h = shared.out_dim().unwrap_or(input_dim);
        for (t, head) in heads.iter().enumerate() {
            head.validate()?;
            if head.in_dim() != Some(h) || head.out_dim() != Some(2) {
                return Err(Error::Shape(format!(
                    "head {t} must be [2 x {h}], found {:?} x {:?}",
                    head.out_dim(),
                    head.in_dim()
                )));
            }
        }
        if let Some(d) = shared.in_dim() {
            if d != input_dim {
                return Err(Error::Shape(format!(
                    "trunk expects {d} inputs, stated input_dim is {input_dim}"
                )));
            }
        }
        if opt_state.heads.len() != heads.len() {
            return Err(Error::Shape("optimizer state does not cover all heads".into()));
        }
        Ok(MtlNetwork {
            shared,
            heads,
            task_weights,
            opt_state,
            input_dim,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Dimension of the trunk output the heads consume.
    pub fn trunk_output_dim(&self) -> usize {
        self.shared.out_dim().unwrap_or(self.input_dim)
    }

    pub fn head(&self, t: usize) -> &DenseParams {
        &self.heads[t]
    }

    /// Total parameter count over trunk and heads.
    pub fn n_params(&self) -> usize {
        self.shared.n_params() + self.heads.iter().map(DenseParams::n_params).sum::<usize>()
    }
}

/// Initializes a multi-task network with Softmax2 heads (the student model).
///
/// `trunk_dims[0]` is the input dimension; each following entry adds one ReLU
/// trunk layer. Heads are `[2 × h]` single layers on the trunk output `h`.
/// Trunk weights are He-uniform, head weights Xavier-uniform, biases zero,
/// task weights exactly `1/T`, and the optimizer state zeroed. Fully
/// deterministic in `seed`.
pub fn mlp_init(trunk_dims: &[usize], n_tasks: usize, seed: u64) -> Result<MtlNetwork> {
    init_network(trunk_dims, n_tasks, Activation::Softmax2, seed)
}

/// Initializes a network with Identity heads, used for Q-value outputs.
pub(crate) fn init_identity_network(
    trunk_dims: &[usize],
    n_tasks: usize,
    seed: u64,
) -> Result<MtlNetwork> {
    init_network(trunk_dims, n_tasks, Activation::Identity, seed)
}

/// Shared constructor for student (Softmax2 heads) and teacher (Identity
/// heads) networks.
pub(crate) fn init_network(
    trunk_dims: &[usize],
    n_tasks: usize,
    head_activation: Activation,
    seed: u64,
) -> Result<MtlNetwork> {
    if trunk_dims.is_empty() {
        return Err(Error::Config("trunk_dims must be nonempty".into()));
    }
    if let Some(bad) = trunk_dims.iter().position(|&d| d == 0) {
        return Err(Error::Config(format!(
            "trunk_dims[{bad}] must be positive"
        )));
    }
    if n_tasks == 0 {
        return Err(Error::Config("n_tasks must be at least 1".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut trunk = Vec::with_capacity(trunk_dims.len() - 1);
    for pair in trunk_dims.windows(2) {
        trunk.push(init_layer(pair[0], pair[1], Activation::ReLU, &mut rng));
    }
    let h = *trunk_dims.last().expect("nonempty");

    let heads: Vec<DenseParams> = (0..n_tasks)
        .map(|_| DenseParams {
            layers: vec![init_layer(h, 2, head_activation, &mut rng)],
        })
        .collect();

    let shared = DenseParams { layers: trunk };
    shared.validate()?;
    for head in &heads {
        head.validate()?;
    }

    let opt_state = OptState {
        shared: AdamWState::zeros_like(&shared),
        heads: heads.iter().map(AdamWState::zeros_like).collect(),
    };

    Ok(MtlNetwork {
        shared,
        heads,
        task_weights: vec![1.0 / n_tasks as f64; n_tasks],
        opt_state,
        input_dim: trunk_dims[0],
    })
}

/// He-uniform for ReLU layers, Xavier-uniform otherwise; biases zero.
/// Weights are drawn in row-major order so initialization is reproducible.
fn init_layer(
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    rng: &mut ChaCha12Rng,
) -> DenseLayer {
    let limit = match activation {
        Activation::ReLU => (6.0 / in_dim as f64).sqrt(),
        Activation::Softmax2 | Activation::Identity => {
            (6.0 / (in_dim as f64 + out_dim as f64)).sqrt()
        }
    };
    let dist = Uniform::new(-limit, limit);
    let mut values = Vec::with_capacity(out_dim * in_dim);
    for _ in 0..out_dim * in_dim {
        values.push(dist.sample(rng));
    }
    DenseLayer {
        weights: Array2::from_shape_vec((out_dim, in_dim), values).expect("shape matches length"),
        bias: Array1::zeros(out_dim),
        activation,
    }
}

/// Flattens a single-layer 2-unit head into `[w00..w0h, w10..w1h, b0, b1]`
/// (row-major weights, then biases), length `2h + 2`.
pub fn flatten_head(head: &DenseParams) -> Result<Vec<f64>> {
    let layer = single_head_layer(head)?;
    let mut out = Vec::with_capacity(layer.weights.len() + 2);
    out.extend(layer.weights.iter().copied());
    out.extend(layer.bias.iter().copied());
    Ok(out)
}

/// Inverse of [`flatten_head`] for a head with input dimension `in_dim`.
pub fn unflatten_head(values: &[f64], in_dim: usize, activation: Activation) -> Result<DenseParams> {
    if values.len() != 2 * in_dim + 2 {
        return Err(Error::Shape(format!(
            "flattened head of length {} does not match in_dim {} (expected {})",
            values.len(),
            in_dim,
            2 * in_dim + 2
        )));
    }
    let weights = Array2::from_shape_vec((2, in_dim), values[..2 * in_dim].to_vec())
        .expect("shape matches length");
    let bias = Array1::from_vec(values[2 * in_dim..].to_vec());
    Ok(DenseParams {
        layers: vec![DenseLayer {
            weights,
            bias,
            activation,
        }],
    })
}

fn single_head_layer(head: &DenseParams) -> Result<&DenseLayer> {
    if head.layers.len() != 1 || head.layers[0].out_dim() != 2 {
        return Err(Error::Shape(
            "head must be a single 2-unit layer".to_string(),
        ));
    }
    Ok(&head.layers[0])
}
