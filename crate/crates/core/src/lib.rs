//! Fairness-aware deep multi-task training engine.
//!
//! The crate trains a hard-parameter-sharing multi-task network (shared ReLU
//! trunk, one two-neuron softmax head per task) under a per-task, per-epoch
//! choice between an accuracy objective and a worst-group fairness objective.
//! The choice is made by a multi-task DQN "teacher" trained on rewards derived
//! from validation accuracy and equalized-odds violation. Task weights on the
//! shared trunk are balanced with GradNorm for both networks.
//!
//! Modules:
//! - [`nn`]: dense-layer primitives (init, forward, backward, AdamW).
//! - [`metrics`]: group confusion rates, equalized-odds violation, ARA/AREO.
//! - [`losses`]: accuracy loss, worst-group fairness loss, fixed trade-off,
//!   greedy selection.
//! - [`student`]: one multi-task training step with GradNorm weight updates.
//! - [`teacher`]: the DQN that scores loss choices, its rewards and TD update.
//! - [`trainer`]: full training loops for every method, convergence control,
//!   checkpoint selection.
//! - [`data`]: synthetic biased data generation, CSV ingestion, splits,
//!   batching.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod seeds;
pub mod student;
pub mod teacher;
pub mod trainer;

pub use error::{Error, Result};
