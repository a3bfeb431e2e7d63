//! Dense-layer network primitives shared by the student and the teacher:
//! initialization, batched forward, exact backward, AdamW updates, gradient
//! norms, and head flattening.

mod adamw;
mod backward;
mod forward;
mod params;

pub use adamw::{adamw_step, AdamWState};
pub use backward::{backward, l2_norm, l2_norm_layers, GradScope, Gradients, LayerGrads};
pub use forward::{forward, ForwardCache};
pub use params::{
    flatten_head, mlp_init, unflatten_head, Activation, DenseLayer, DenseParams, MtlNetwork,
    OptState,
};
pub(crate) use params::init_identity_network;
