//! The teacher: a multi-task DQN that maps a task head's parameters to
//! Q-values over the two loss choices, scores hypothetical updates through a
//! one-step look-forward, and trains on squared TD errors with its own
//! GradNorm environment weights.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::losses::{accuracy_loss, fairness_loss, group_log_losses, Action};
use crate::metrics::{accuracy, confusion_by_group, eo_violation, threshold_predictions, MetricsReport};
use crate::nn::{
    adamw_step, backward, flatten_head, forward, l2_norm, DenseParams, GradScope, LayerGrads,
    MtlNetwork,
};
use crate::student::{
    gradnorm_weight_update, Decision, GradNormConfig, GradStats, ADAMW_BETAS, ADAMW_EPS,
    ADAMW_WEIGHT_DECAY,
};

/// Guards the denominators of the reward against `acc_best = 0` and
/// `eo_best = 1`.
pub const REWARD_EPS: f64 = 1e-3;

/// A flattened task head, the teacher's observation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One observed step in a task environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub task: usize,
    pub state: StateVector,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateVector,
}

/// Best validation accuracy (never decreasing) and EO violation (never
/// increasing) seen so far, per task.
#[derive(Debug, Clone, PartialEq)]
pub struct BestEntry {
    pub acc: f64,
    pub eo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestTracker {
    entries: Vec<BestEntry>,
}

impl BestTracker {
    /// Seeds the tracker from an initial evaluation (the untrained model).
    pub fn from_report(report: &MetricsReport) -> Self {
        BestTracker {
            entries: report
                .acc
                .iter()
                .zip(&report.eo)
                .map(|(&acc, &eo)| BestEntry { acc, eo })
                .collect(),
        }
    }

    pub fn entry(&self, task: usize) -> &BestEntry {
        &self.entries[task]
    }

    pub fn n_tasks(&self) -> usize {
        self.entries.len()
    }

    /// Folds in realized metrics for one task.
    pub fn update(&mut self, task: usize, acc: f64, eo: f64) {
        let entry = &mut self.entries[task];
        entry.acc = entry.acc.max(acc);
        entry.eo = entry.eo.min(eo);
    }

    pub fn observe_report(&mut self, report: &MetricsReport) {
        for t in 0..self.entries.len() {
            self.update(t, report.acc[t], report.eo[t]);
        }
    }
}

/// The MT-DQN: shared ReLU trunk over flattened-head states, one 2-output
/// Identity head per task environment, GradNorm environment weights, and a
/// discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherDqn {
    net: MtlNetwork,
    pub gamma: f64,
}

impl TeacherDqn {
    /// Builds the teacher. `trunk_dims[0]` must equal the state dimension
    /// `2h + 2` of the student heads it will observe.
    pub fn init(trunk_dims: &[usize], n_tasks: usize, gamma: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "discount factor {gamma} must lie in [0, 1)"
            )));
        }
        let net = crate::nn::init_identity_network(trunk_dims, n_tasks, seed)?;
        Ok(TeacherDqn { net, gamma })
    }

    pub fn n_tasks(&self) -> usize {
        self.net.n_tasks()
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// GradNorm environment weights, summing to the task count after every
    /// update.
    pub fn env_weights(&self) -> &[f64] {
        &self.net.task_weights
    }

    /// The underlying network (for inspection in tests and tooling).
    pub fn network(&self) -> &MtlNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut MtlNetwork {
        &mut self.net
    }

    /// TD target for one transition: `r + gamma * max_a Q(z', a)`, evaluated
    /// with the current parameters.
    pub fn td_target(&self, transition: &Transition) -> Result<f64> {
        let (q_acc, q_fair) = q_values(self, &transition.next_state, transition.task)?;
        Ok(transition.reward + self.gamma * q_acc.max(q_fair))
    }
}

/// Encodes a task head as the teacher's observation: the flattened
/// parameters, no normalization.
pub fn encode_state(head: &DenseParams) -> Result<StateVector> {
    Ok(StateVector(flatten_head(head)?))
}

/// Q-values for both actions of task `t` at state `z`.
pub fn q_values(dqn: &TeacherDqn, z: &StateVector, t: usize) -> Result<(f64, f64)> {
    if t >= dqn.n_tasks() {
        return Err(Error::Shape(format!(
            "task {t} out of range for {} environments",
            dqn.n_tasks()
        )));
    }
    if z.len() != dqn.state_dim() {
        return Err(Error::Shape(format!(
            "state has {} entries, teacher expects {}",
            z.len(),
            dqn.state_dim()
        )));
    }
    let x = Array2::from_shape_vec((1, z.len()), z.0.clone()).expect("shape matches");
    let (outputs, _) = forward(&dqn.net, x.view())?;
    Ok((outputs[t][(0, 0)], outputs[t][(0, 1)]))
}

/// Greedy action per task: the larger Q-value wins, ties go to Accuracy.
/// With `epsilon > 0`, each task's action is replaced by a uniform draw from
/// `rng` with probability `epsilon`.
pub fn decide(
    dqn: &TeacherDqn,
    states: &[StateVector],
    epsilon: f64,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<Decision> {
    if states.len() != dqn.n_tasks() {
        return Err(Error::Shape(format!(
            "{} states for {} tasks",
            states.len(),
            dqn.n_tasks()
        )));
    }
    let mut actions = Vec::with_capacity(states.len());
    for (t, z) in states.iter().enumerate() {
        let (q_acc, q_fair) = q_values(dqn, z, t)?;
        let mut action = if q_fair > q_acc {
            Action::Fairness
        } else {
            Action::Accuracy
        };
        if epsilon > 0.0 {
            use rand::Rng;
            if rng.gen::<f64>() < epsilon {
                action = if rng.gen::<bool>() {
                    Action::Fairness
                } else {
                    Action::Accuracy
                };
            }
        }
        actions.push(action);
    }
    Ok(Decision(actions))
}

/// A batch restricted to one task: features, protected attribute, and that
/// task's labels.
#[derive(Debug, Clone, Copy)]
pub struct TaskBatch<'a> {
    pub x: ArrayView2<'a, f64>,
    pub protected: &'a [u8],
    pub labels: &'a [u8],
}

/// The teacher's one-step look-forward into the student environment.
///
/// Applies a hypothetical head-only AdamW update for task `t` under the given
/// action's loss on the training batch (shared trunk frozen), then evaluates
/// task `t` on the validation batch. Returns the accuracy, EO violation, and
/// the hypothetical post-update head state. The snapshot is never mutated.
pub fn counterfactual_eval(
    snapshot: &MtlNetwork,
    t: usize,
    action: Action,
    train: TaskBatch<'_>,
    val: TaskBatch<'_>,
    lr: f64,
) -> Result<(f64, f64, StateVector)> {
    let mut working = snapshot.clone();
    let n_tasks = working.n_tasks();
    if t >= n_tasks {
        return Err(Error::Shape(format!("task {t} out of range")));
    }

    let (outputs, cache) = forward(&working, train.x)?;
    let loss = match action {
        Action::Accuracy => accuracy_loss(outputs[t].view(), train.labels)?,
        Action::Fairness => {
            fairness_loss(&group_log_losses(outputs[t].view(), train.labels, train.protected)?)
        }
    };
    if !loss.value.is_finite() {
        return Err(Error::Numeric(format!(
            "counterfactual {action:?} loss for task {t} is not finite"
        )));
    }

    // lr = 0 is an explicit no-op probe.
    if lr > 0.0 {
        let mut d_out: Vec<Option<Array2<f64>>> = vec![None; n_tasks];
        d_out[t] = Some(loss.d_prob);
        let grads = backward(&working, &cache, &d_out, GradScope::Head(t))?;
        adamw_step(
            &mut working.heads[t],
            &mut working.opt_state.heads[t],
            grads.heads[t].as_ref().expect("head gradient requested"),
            lr,
            ADAMW_BETAS,
            ADAMW_EPS,
            ADAMW_WEIGHT_DECAY,
        )?;
    }

    let (val_outputs, _) = forward(&working, val.x)?;
    let preds = threshold_predictions(val_outputs[t].column(1).iter().copied());
    let acc = accuracy(&preds, val.labels)?;
    let eo = eo_violation(&confusion_by_group(&preds, val.labels, val.protected)?);
    let next_state = encode_state(&working.heads[t])?;
    Ok((acc, eo, next_state))
}

/// Scale-invariant reward: positive only when accuracy improves on its best
/// and EO violation improves on its best, negative as soon as either regresses.
pub fn compute_reward(acc: f64, eo: f64, best: &BestEntry) -> f64 {
    let acc_term = (acc - best.acc) / best.acc.max(REWARD_EPS);
    let eo_term = (best.eo - eo) / (1.0 - best.eo).max(REWARD_EPS);
    acc_term.min(eo_term)
}

/// One TD update: per task, the squared error between predicted Q-values and
/// detached targets (mean over that task's transitions), a head update, a
/// GradNorm step on the environment weights, and a shared-trunk update with
/// the post-update weights. Expects exactly two transitions per task, one per
/// action.
pub fn teacher_step(
    dqn: &mut TeacherDqn,
    transitions: &[Transition],
    gn: &GradNormConfig,
    lr: f64,
) -> Result<GradStats> {
    let n_tasks = dqn.n_tasks();
    if transitions.len() != 2 * n_tasks {
        return Err(Error::Contract(format!(
            "expected {} transitions (two per task), got {}",
            2 * n_tasks,
            transitions.len()
        )));
    }
    let mut per_task: Vec<Vec<&Transition>> = vec![Vec::new(); n_tasks];
    for tr in transitions {
        if tr.task >= n_tasks {
            return Err(Error::Contract(format!("transition task {} out of range", tr.task)));
        }
        per_task[tr.task].push(tr);
    }
    for (t, group) in per_task.iter().enumerate() {
        if group.len() != 2 || group[0].action == group[1].action {
            return Err(Error::Contract(format!(
                "task {t} needs exactly one transition per action"
            )));
        }
    }
    teacher_step_grouped(dqn, &per_task, gn, lr)
}

/// TD update over an arbitrary nonempty transition group per task; used by
/// the replay variant. Targets are computed up front from the pre-update
/// parameters, then heads, weights, and trunk are updated in that order.
fn teacher_step_grouped(
    dqn: &mut TeacherDqn,
    per_task: &[Vec<&Transition>],
    gn: &GradNormConfig,
    lr: f64,
) -> Result<GradStats> {
    let n_tasks = dqn.n_tasks();
    let state_dim = dqn.state_dim();

    // Detached targets from the current parameters.
    let mut targets: Vec<Vec<f64>> = Vec::with_capacity(n_tasks);
    for group in per_task {
        let mut ts = Vec::with_capacity(group.len());
        for tr in group {
            if tr.state.len() != state_dim || tr.next_state.len() != state_dim {
                return Err(Error::Shape(format!(
                    "transition state length {} does not match teacher input {}",
                    tr.state.len(),
                    state_dim
                )));
            }
            ts.push(dqn.td_target(tr)?);
        }
        targets.push(ts);
    }

    // Per-task TD losses and gradients at the starting parameters.
    let mut head_grads: Vec<Vec<LayerGrads>> = Vec::with_capacity(n_tasks);
    let mut trunk_grads: Vec<Vec<LayerGrads>> = Vec::with_capacity(n_tasks);
    let mut raw_norm = vec![0.0; n_tasks];
    let mut td_loss = vec![0.0; n_tasks];
    for (t, group) in per_task.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::Contract(format!("task {t} has no transitions")));
        }
        let k = group.len();
        let mut rows = Vec::with_capacity(k * state_dim);
        for tr in group {
            rows.extend_from_slice(&tr.state.0);
        }
        let x = Array2::from_shape_vec((k, state_dim), rows).expect("shape matches");
        let (outputs, cache) = forward(&dqn.net, x.view())?;
        let q = &outputs[t];

        let mut d_q = Array2::zeros((k, 2));
        let scale = 1.0 / k as f64;
        for (j, tr) in group.iter().enumerate() {
            let col = match tr.action {
                Action::Accuracy => 0,
                Action::Fairness => 1,
            };
            let diff = q[(j, col)] - targets[t][j];
            td_loss[t] += scale * diff * diff;
            d_q[(j, col)] = 2.0 * scale * diff;
        }
        if !td_loss[t].is_finite() {
            return Err(Error::Numeric(format!("TD loss for task {t} is not finite")));
        }

        let mut d_out: Vec<Option<Array2<f64>>> = vec![None; n_tasks];
        d_out[t] = Some(d_q);
        let mut grads = backward(&dqn.net, &cache, &d_out, GradScope::Both)?;
        head_grads.push(grads.heads[t].take().expect("head gradient requested"));
        let shared = grads.shared.take().expect("shared gradient requested");
        raw_norm[t] = shared.last().map(l2_norm).unwrap_or(0.0);
        trunk_grads.push(shared);
    }

    let stats = GradStats::from_measurements(td_loss, raw_norm, &dqn.net.task_weights, gn.alpha);

    for (t, grads) in head_grads.iter().enumerate() {
        adamw_step(
            &mut dqn.net.heads[t],
            &mut dqn.net.opt_state.heads[t],
            grads,
            lr,
            ADAMW_BETAS,
            ADAMW_EPS,
            ADAMW_WEIGHT_DECAY,
        )
        .map_err(|e| Error::Numeric(format!("teacher head update for task {t}: {e}")))?;
    }

    dqn.net.task_weights = gradnorm_weight_update(&stats, &dqn.net.task_weights, gn);

    if !dqn.net.shared.layers.is_empty() {
        let mut combined: Vec<LayerGrads> = dqn
            .net
            .shared
            .layers
            .iter()
            .map(LayerGrads::zeros_like)
            .collect();
        for (t, grads) in trunk_grads.iter().enumerate() {
            let w = dqn.net.task_weights[t];
            for (acc, g) in combined.iter_mut().zip(grads) {
                acc.weights.scaled_add(w, &g.weights);
                acc.bias.scaled_add(w, &g.bias);
            }
        }
        adamw_step(
            &mut dqn.net.shared,
            &mut dqn.net.opt_state.shared,
            &combined,
            lr,
            ADAMW_BETAS,
            ADAMW_EPS,
            ADAMW_WEIGHT_DECAY,
        )
        .map_err(|e| Error::Numeric(format!("teacher trunk update: {e}")))?;
    }

    Ok(stats)
}

/// FIFO replay over teacher transitions; off by default in training, exposed
/// for experimentation.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::new(),
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// TD update over everything currently in the replay buffer (after pushing
/// the fresh transitions). Every task must still be represented.
pub fn teacher_step_replayed(
    dqn: &mut TeacherDqn,
    fresh: Vec<Transition>,
    replay: &mut ReplayBuffer,
    gn: &GradNormConfig,
    lr: f64,
) -> Result<GradStats> {
    for tr in fresh {
        replay.push(tr);
    }
    let mut per_task: Vec<Vec<&Transition>> = vec![Vec::new(); dqn.n_tasks()];
    for tr in replay.items.iter() {
        if tr.task < per_task.len() {
            per_task[tr.task].push(tr);
        }
    }
    teacher_step_grouped(dqn, &per_task, gn, lr)
}
