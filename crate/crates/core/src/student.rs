//! One multi-task training step: per-task head updates with the selected
//! loss, GradNorm task-weight learning, and a shared-trunk update with the
//! freshly updated weights.

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::losses::{accuracy_loss, fairness_loss, group_log_losses, Action, LossValue};
use crate::nn::{
    adamw_step, backward, forward, l2_norm, ForwardCache, GradScope, LayerGrads, MtlNetwork,
};

/// AdamW settings used by every training step in this crate.
pub const ADAMW_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAMW_EPS: f64 = 1e-8;
pub const ADAMW_WEIGHT_DECAY: f64 = 0.0;

/// Task weights never drop below this floor.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Per-task loss choice for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision(pub Vec<Action>);

impl Decision {
    pub fn all(action: Action, n_tasks: usize) -> Self {
        Decision(vec![action; n_tasks])
    }

    pub fn all_accuracy(n_tasks: usize) -> Self {
        Self::all(Action::Accuracy, n_tasks)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }
}

/// GradNorm hyperparameters: restoring strength `alpha` and the weight
/// learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradNormConfig {
    pub alpha: f64,
    pub lr_w: f64,
}

/// Per-step gradient statistics feeding the GradNorm weight update.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStats {
    /// Per-task loss values.
    pub loss: Vec<f64>,
    /// Weighted gradient norms `G_t = w_t * ||grad_t||` measured on the final
    /// shared-trunk layer.
    pub grad_norm: Vec<f64>,
    /// Unweighted norms `||grad_t||`.
    pub raw_norm: Vec<f64>,
    /// Mean of `grad_norm`.
    pub mean_norm: f64,
    /// Inverse training rates `rho_t = loss_t / mean(loss)`.
    pub rho: Vec<f64>,
    /// `sum_t |G_t - mean_norm * rho_t^alpha|`.
    pub l_grad: f64,
}

impl GradStats {
    pub(crate) fn from_measurements(
        loss: Vec<f64>,
        raw_norm: Vec<f64>,
        weights: &[f64],
        alpha: f64,
    ) -> Self {
        let t = loss.len() as f64;
        let grad_norm: Vec<f64> = raw_norm.iter().zip(weights).map(|(r, w)| w * r).collect();
        let mean_norm = grad_norm.iter().sum::<f64>() / t;
        let mean_loss = loss.iter().sum::<f64>() / t;
        // All-zero losses mean there is nothing to balance; a neutral rate
        // keeps everything finite.
        let rho: Vec<f64> = if mean_loss == 0.0 {
            vec![1.0; loss.len()]
        } else {
            loss.iter().map(|l| l / mean_loss).collect()
        };
        let l_grad = grad_norm
            .iter()
            .zip(&rho)
            .map(|(g, r)| (g - mean_norm * r.powf(alpha)).abs())
            .sum();
        GradStats {
            loss,
            grad_norm,
            raw_norm,
            mean_norm,
            rho,
            l_grad,
        }
    }
}

/// Runs one training step on a batch under the given per-task loss choice.
///
/// All gradients are taken at the step's starting parameters: each head gets
/// an AdamW update with its own loss gradient, task weights move one GradNorm
/// step, and the shared trunk gets an AdamW update with the weighted sum of
/// per-task trunk gradients using the post-update weights.
pub fn student_step(
    net: &mut MtlNetwork,
    x: ArrayView2<'_, f64>,
    protected: &[u8],
    labels: ArrayView2<'_, u8>,
    decision: &Decision,
    lr: f64,
    gn: &GradNormConfig,
) -> Result<GradStats> {
    let n_tasks = net.n_tasks();
    if decision.len() != n_tasks || labels.ncols() != n_tasks {
        return Err(Error::Shape(format!(
            "decision covers {} tasks, labels {}, network {}",
            decision.len(),
            labels.ncols(),
            n_tasks
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyEvaluation("training step on empty batch".into()));
    }

    let (outputs, cache) = forward(net, x)?;
    let mut losses = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let y_t: Vec<u8> = labels.column(t).to_vec();
        let action = decision.actions()[t];
        let loss = match action {
            Action::Accuracy => accuracy_loss(outputs[t].view(), &y_t)?,
            Action::Fairness => fairness_loss(&group_log_losses(outputs[t].view(), &y_t, protected)?),
        };
        if !loss.value.is_finite() {
            return Err(Error::Numeric(format!(
                "task {t} produced a non-finite {action:?} loss"
            )));
        }
        losses.push(loss);
    }
    student_step_with_losses(net, &cache, &losses, lr, gn)
}

/// The loss-agnostic core of [`student_step`], shared with the fixed
/// trade-off and greedy baselines. `losses[t]` must carry the gradient of the
/// scalar objective for task `t` w.r.t. the cached forward's head outputs.
pub fn student_step_with_losses(
    net: &mut MtlNetwork,
    cache: &ForwardCache,
    losses: &[LossValue],
    lr: f64,
    gn: &GradNormConfig,
) -> Result<GradStats> {
    let n_tasks = net.n_tasks();
    if losses.len() != n_tasks {
        return Err(Error::Shape(format!(
            "{} losses for {} tasks",
            losses.len(),
            n_tasks
        )));
    }

    // Gradients for every task at the step's starting parameters.
    let mut head_grads: Vec<Vec<LayerGrads>> = Vec::with_capacity(n_tasks);
    let mut trunk_grads: Vec<Vec<LayerGrads>> = Vec::with_capacity(n_tasks);
    let mut raw_norm = vec![0.0; n_tasks];
    for (t, loss) in losses.iter().enumerate() {
        let mut d_out: Vec<Option<ndarray::Array2<f64>>> = vec![None; n_tasks];
        d_out[t] = Some(loss.d_prob.clone());
        let mut grads = backward(net, cache, &d_out, GradScope::Both)?;
        head_grads.push(grads.heads[t].take().expect("head gradient requested"));
        let shared = grads.shared.take().expect("shared gradient requested");
        raw_norm[t] = shared.last().map(l2_norm).unwrap_or(0.0);
        trunk_grads.push(shared);
    }

    let loss_values: Vec<f64> = losses.iter().map(|l| l.value).collect();
    let stats = GradStats::from_measurements(loss_values, raw_norm, &net.task_weights, gn.alpha);

    for (t, grads) in head_grads.iter().enumerate() {
        adamw_step(
            &mut net.heads[t],
            &mut net.opt_state.heads[t],
            grads,
            lr,
            ADAMW_BETAS,
            ADAMW_EPS,
            ADAMW_WEIGHT_DECAY,
        )
        .map_err(|e| Error::Numeric(format!("head update for task {t}: {e}")))?;
    }

    net.task_weights = gradnorm_weight_update(&stats, &net.task_weights, gn);

    if !net.shared.layers.is_empty() {
        let mut combined: Vec<LayerGrads> = net
            .shared
            .layers
            .iter()
            .map(LayerGrads::zeros_like)
            .collect();
        for (t, grads) in trunk_grads.iter().enumerate() {
            let w = net.task_weights[t];
            for (acc, g) in combined.iter_mut().zip(grads) {
                acc.weights.scaled_add(w, &g.weights);
                acc.bias.scaled_add(w, &g.bias);
            }
        }
        adamw_step(
            &mut net.shared,
            &mut net.opt_state.shared,
            &combined,
            lr,
            ADAMW_BETAS,
            ADAMW_EPS,
            ADAMW_WEIGHT_DECAY,
        )
        .map_err(|e| Error::Numeric(format!("shared trunk update: {e}")))?;
    }

    Ok(stats)
}

/// One GradNorm step on the task weights.
///
/// The target norms `mean_norm * rho_t^alpha` are treated as constants, so
/// with `G_t = w_t * ||grad_t||` the weight gradient is
/// `sign(G_t - target_t) * ||grad_t||`. The result is floored at
/// [`WEIGHT_FLOOR`] and renormalized to sum to the task count.
pub fn gradnorm_weight_update(stats: &GradStats, weights: &[f64], gn: &GradNormConfig) -> Vec<f64> {
    let total = weights.len() as f64;
    let mut updated: Vec<f64> = weights
        .iter()
        .enumerate()
        .map(|(t, &w)| {
            let target = stats.mean_norm * stats.rho[t].powf(gn.alpha);
            let gap = stats.grad_norm[t] - target;
            w - gn.lr_w * sign(gap) * stats.raw_norm[t]
        })
        .collect();
    renormalize_with_floor(&mut updated, total, WEIGHT_FLOOR);
    updated
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `w` onto `{w_i >= floor, sum w_i = total}`: floored entries are
/// pinned and the remaining mass is distributed proportionally over the rest.
fn renormalize_with_floor(w: &mut [f64], total: f64, floor: f64) {
    let n = w.len();
    if n == 0 {
        return;
    }
    for v in w.iter_mut() {
        if !v.is_finite() || *v < floor {
            *v = floor;
        }
    }
    let mut pinned = vec![false; n];
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        if n_pinned == n {
            let equal = total / n as f64;
            w.iter_mut().for_each(|v| *v = equal);
            return;
        }
        let free_target = total - floor * n_pinned as f64;
        let free_sum: f64 = w
            .iter()
            .zip(&pinned)
            .filter(|(_, &p)| !p)
            .map(|(v, _)| *v)
            .sum();
        if free_sum <= 0.0 {
            let equal = total / n as f64;
            w.iter_mut().for_each(|v| *v = equal);
            return;
        }
        let scale = free_target / free_sum;
        let mut newly_pinned = false;
        for (v, p) in w.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                continue;
            }
            *v *= scale;
            if *v < floor {
                *v = floor;
                *p = true;
                newly_pinned = true;
            }
        }
        if !newly_pinned {
            return;
        }
    }
}

/// Column `t` of a label matrix as a plain vector.
pub fn task_labels(labels: ArrayView2<'_, u8>, t: usize) -> Vec<u8> {
    labels.index_axis(Axis(1), t).to_vec()
}
