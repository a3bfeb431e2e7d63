//! Full training loops: the teacher-guided method, the four baselines,
//! convergence control, and best-checkpoint selection.
//!
//! Every method shares the same per-batch student mechanics and the same
//! validation composite (mean over tasks of `acc - eo`) for checkpointing and
//! early stopping; they differ only in how each task's loss is chosen.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    accuracy_loss, fairness_loss, fixed_tradeoff_loss, greedy_select, group_log_losses, Action,
};
use crate::metrics::{accuracy, confusion_by_group, eo_violation, threshold_predictions, MetricsReport};
use crate::nn::{forward, mlp_init, MtlNetwork};
use crate::seeds::{child_seed, stream, stream_rng};
use crate::student::{
    student_step, student_step_with_losses, Decision, GradNormConfig,
};
use crate::teacher::{
    compute_reward, counterfactual_eval, decide, encode_state, teacher_step, BestTracker,
    TaskBatch, TeacherDqn, Transition,
};

/// Hidden layer sizes of the teacher trunk; its input dimension is the
/// student head state size `2h + 2`.
pub const TEACHER_HIDDEN_DIMS: [usize; 2] = [32, 16];

/// A validation composite must improve by more than this to reset patience.
pub const CONVERGENCE_MIN_DELTA: f64 = 1e-4;

/// Training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Teacher-guided dynamic loss selection.
    L2t,
    /// Accuracy-only multi-task training.
    Vanilla,
    /// Greedy worst-loss selection per batch.
    Gfmt,
    /// Fixed per-task accuracy/fairness trade-off.
    Fixed,
    /// Independent single-task models (one per task).
    Stl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::L2t => "l2t",
            Method::Vanilla => "vanilla",
            Method::Gfmt => "gfmt",
            Method::Fixed => "fixed",
            Method::Stl => "stl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2t" => Ok(Method::L2t),
            "vanilla" => Ok(Method::Vanilla),
            "gfmt" => Ok(Method::Gfmt),
            "fixed" => Ok(Method::Fixed),
            "stl" => Ok(Method::Stl),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected l2t, vanilla, gfmt, fixed, or stl)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters and bookkeeping for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `[input_dim, hidden...]`; each consecutive pair is one ReLU trunk layer.
    pub trunk_dims: Vec<usize>,
    pub n_tasks: usize,
    pub lr_student: f64,
    pub lr_teacher: f64,
    /// GradNorm weight learning rate.
    pub lr_w: f64,
    pub gradnorm_alpha: f64,
    /// Teacher discount factor.
    pub gamma: f64,
    /// Exploration rate for the teacher's decisions (0 = pure argmax).
    #[serde(default)]
    pub epsilon_explore: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Per-task trade-off weights, used by the fixed and stl methods.
    #[serde(default)]
    pub lambda_fixed: Vec<f64>,
    pub method: Method,
}

fn default_batch_size() -> usize {
    8192
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_dims.is_empty() || self.trunk_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("trunk_dims must be nonempty and positive".into()));
        }
        if self.n_tasks == 0 {
            return Err(Error::Config("n_tasks must be at least 1".into()));
        }
        for (name, lr) in [
            ("lr_student", self.lr_student),
            ("lr_teacher", self.lr_teacher),
            ("lr_w", self.lr_w),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} = {lr} must be positive")));
            }
        }
        if !(self.gradnorm_alpha >= 0.0) {
            return Err(Error::Config(format!(
                "gradnorm_alpha = {} must be nonnegative",
                self.gradnorm_alpha
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma = {} must lie in [0, 1)",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon_explore) {
            return Err(Error::Config(format!(
                "epsilon_explore = {} must lie in [0, 1]",
                self.epsilon_explore
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if matches!(self.method, Method::Fixed | Method::Stl) {
            if self.lambda_fixed.len() != self.n_tasks {
                return Err(Error::Config(format!(
                    "lambda_fixed has {} entries for {} tasks",
                    self.lambda_fixed.len(),
                    self.n_tasks
                )));
            }
            if let Some(bad) = self.lambda_fixed.iter().position(|l| !(*l >= 0.0)) {
                return Err(Error::Config(format!(
                    "lambda_fixed[{bad}] must be nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Train/validation/test datasets for one run.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    fn validate(&self, cfg: &TrainConfig, n_tasks: usize) -> Result<()> {
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            part.validate()?;
            if part.n() == 0 {
                return Err(Error::Config(format!("{name} split is empty")));
            }
            if part.d() != cfg.trunk_dims[0] {
                return Err(Error::Shape(format!(
                    "{name} split has {} features, trunk expects {}",
                    part.d(),
                    cfg.trunk_dims[0]
                )));
            }
            if part.n_tasks() != n_tasks {
                return Err(Error::Shape(format!(
                    "{name} split has {} tasks, config says {}",
                    part.n_tasks(),
                    n_tasks
                )));
            }
        }
        Ok(())
    }
}

/// Epoch-by-task record of the loss each task trained on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionTrace {
    n_tasks: usize,
    rows: Vec<Vec<Action>>,
}

impl SelectionTrace {
    pub fn new(n_tasks: usize) -> Self {
        SelectionTrace {
            n_tasks,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Action>) {
        debug_assert_eq!(row.len(), self.n_tasks);
        self.rows.push(row);
    }

    pub fn n_epochs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn rows(&self) -> &[Vec<Action>] {
        &self.rows
    }

    /// Fraction of epochs task `t` trained on the given action.
    pub fn action_fraction(&self, t: usize, action: Action) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let hits = self.rows.iter().filter(|row| row[t] == action).count();
        hits as f64 / self.rows.len() as f64
    }
}

/// A finished run: the best checkpoint by validation composite, the epoch it
/// came from, the final-parameters network, and the per-epoch validation
/// metrics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub best: MtlNetwork,
    pub best_epoch: usize,
    pub final_net: MtlNetwork,
    pub history: Vec<MetricsReport>,
}

impl TrainedModel {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Which network a weight observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Student,
    Teacher,
}

/// Optional instrumentation and overrides for a run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Called with the task (or environment) weights after every student and
    /// teacher step.
    pub weight_observer: Option<&'a mut dyn FnMut(StepKind, &[f64])>,
    /// Replaces the teacher's decision with a fixed action (stub teacher).
    pub teacher_override: Option<Action>,
}

/// The teacher-guided method.
pub fn train_l2tfmt(
    cfg: &TrainConfig,
    splits: &DataSplits,
) -> Result<(TrainedModel, SelectionTrace)> {
    expect_method(cfg, Method::L2t)?;
    run_training(cfg, splits, &mut TrainHooks::default())
}

/// [`train_l2tfmt`] with hooks (weight observer, stub teacher).
pub fn train_l2tfmt_with(
    cfg: &TrainConfig,
    splits: &DataSplits,
    hooks: &mut TrainHooks<'_>,
) -> Result<(TrainedModel, SelectionTrace)> {
    expect_method(cfg, Method::L2t)?;
    run_training(cfg, splits, hooks)
}

/// Accuracy-only baseline; every decision is fixed to the accuracy loss.
pub fn train_vanilla(
    cfg: &TrainConfig,
    splits: &DataSplits,
) -> Result<(TrainedModel, SelectionTrace)> {
    expect_method(cfg, Method::Vanilla)?;
    run_training(cfg, splits, &mut TrainHooks::default())
}

/// Greedy baseline: per batch and task, train on whichever loss is larger.
pub fn train_gfmt(
    cfg: &TrainConfig,
    splits: &DataSplits,
) -> Result<(TrainedModel, SelectionTrace)> {
    expect_method(cfg, Method::Gfmt)?;
    run_training(cfg, splits, &mut TrainHooks::default())
}

/// Fixed trade-off baseline: per task, `accuracy + lambda_t * fairness`.
pub fn train_fixed(
    cfg: &TrainConfig,
    splits: &DataSplits,
) -> Result<(TrainedModel, SelectionTrace)> {
    expect_method(cfg, Method::Fixed)?;
    run_training(cfg, splits, &mut TrainHooks::default())
}

/// Trains a single-task model on task `t` with the fixed trade-off
/// objective; supplies the denominators for the relative aggregates.
pub fn train_stl(
    cfg: &TrainConfig,
    splits: &DataSplits,
    task: usize,
) -> Result<(TrainedModel, SelectionTrace)> {
    if task >= cfg.n_tasks {
        return Err(Error::Config(format!(
            "task {task} out of range for {} tasks",
            cfg.n_tasks
        )));
    }
    if cfg.lambda_fixed.len() != cfg.n_tasks {
        return Err(Error::Config(format!(
            "lambda_fixed has {} entries for {} tasks",
            cfg.lambda_fixed.len(),
            cfg.n_tasks
        )));
    }
    let sub_cfg = TrainConfig {
        n_tasks: 1,
        lambda_fixed: vec![cfg.lambda_fixed[task]],
        method: Method::Fixed,
        // Each task's model gets its own initialization stream.
        seed: child_seed(cfg.seed, "stl-task", task as u64),
        ..cfg.clone()
    };
    let sub_splits = DataSplits {
        train: splits.train.single_task(task)?,
        val: splits.val.single_task(task)?,
        test: splits.test.single_task(task)?,
    };
    run_training(&sub_cfg, &sub_splits, &mut TrainHooks::default())
}

/// Result of [`train_method`]: one model, or one per task for stl.
pub enum TrainOutcome {
    Single(Box<(TrainedModel, SelectionTrace)>),
    PerTask(Vec<(TrainedModel, SelectionTrace)>),
}

/// Dispatches on `cfg.method`.
pub fn train_method(cfg: &TrainConfig, splits: &DataSplits) -> Result<TrainOutcome> {
    match cfg.method {
        Method::Stl => {
            let runs = (0..cfg.n_tasks)
                .map(|t| train_stl(cfg, splits, t))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainOutcome::PerTask(runs))
        }
        _ => Ok(TrainOutcome::Single(Box::new(run_training(
            cfg,
            splits,
            &mut TrainHooks::default(),
        )?))),
    }
}

/// Per-task test metrics of an stl bundle, as one combined report.
pub fn evaluate_stl(models: &[TrainedModel], data: &Dataset) -> Result<MetricsReport> {
    let mut acc = Vec::with_capacity(models.len());
    let mut eo = Vec::with_capacity(models.len());
    for (t, model) in models.iter().enumerate() {
        let single = data.single_task(t)?;
        let report = evaluate(&model.best, &single)?;
        acc.push(report.acc[0]);
        eo.push(report.eo[0]);
    }
    Ok(MetricsReport {
        acc,
        eo,
        ara: None,
        areo: None,
    })
}

fn expect_method(cfg: &TrainConfig, method: Method) -> Result<()> {
    if cfg.method != method {
        return Err(Error::Config(format!(
            "config method is {}, this entry point trains {}",
            cfg.method, method
        )));
    }
    Ok(())
}

/// True once the best composite has not improved by more than
/// [`CONVERGENCE_MIN_DELTA`] for `patience` consecutive epochs.
pub fn has_converged(history: &[f64], patience: usize) -> bool {
    let Some((&first, rest)) = history.split_first() else {
        return false;
    };
    let mut best = first;
    let mut stale = 0usize;
    for &score in rest {
        if score > best + CONVERGENCE_MIN_DELTA {
            best = score;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale >= patience
}

/// Per-task accuracy and EO violation over a full dataset, with 0.5
/// thresholding on the class-1 probability.
pub fn evaluate(net: &MtlNetwork, data: &Dataset) -> Result<MetricsReport> {
    if data.n() == 0 {
        return Err(Error::EmptyEvaluation("evaluate on empty split".into()));
    }
    if data.n_tasks() != net.n_tasks() {
        return Err(Error::Shape(format!(
            "dataset has {} tasks, network {}",
            data.n_tasks(),
            net.n_tasks()
        )));
    }
    let (outputs, _) = forward(net, data.features_view())?;
    let mut acc = Vec::with_capacity(net.n_tasks());
    let mut eo = Vec::with_capacity(net.n_tasks());
    for t in 0..net.n_tasks() {
        let labels = data.task_labels(t);
        let preds = threshold_predictions(outputs[t].column(1).iter().copied());
        acc.push(accuracy(&preds, &labels)?);
        eo.push(eo_violation(&confusion_by_group(&preds, &labels, &data.protected)?));
    }
    Ok(MetricsReport {
        acc,
        eo,
        ara: None,
        areo: None,
    })
}

struct TeacherRuntime {
    dqn: TeacherDqn,
    tracker: BestTracker,
    explore: ChaCha12Rng,
}

fn with_epoch_context(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

fn run_training(
    cfg: &TrainConfig,
    splits: &DataSplits,
    hooks: &mut TrainHooks<'_>,
) -> Result<(TrainedModel, SelectionTrace)> {
    cfg.validate()?;
    splits.validate(cfg, cfg.n_tasks)?;
    let n_tasks = cfg.n_tasks;
    let gn = GradNormConfig {
        alpha: cfg.gradnorm_alpha,
        lr_w: cfg.lr_w,
    };

    let mut net = mlp_init(
        &cfg.trunk_dims,
        n_tasks,
        child_seed(cfg.seed, stream::STUDENT_INIT, 0),
    )?;

    let mut teacher = if cfg.method == Method::L2t {
        let state_dim = 2 * net.trunk_output_dim() + 2;
        let mut dims = vec![state_dim];
        dims.extend_from_slice(&TEACHER_HIDDEN_DIMS);
        let dqn = TeacherDqn::init(
            &dims,
            n_tasks,
            cfg.gamma,
            child_seed(cfg.seed, stream::TEACHER_INIT, 0),
        )?;
        // The reward baseline starts from the untrained model.
        let initial = evaluate(&net, &splits.val)?;
        Some(TeacherRuntime {
            dqn,
            tracker: BestTracker::from_report(&initial),
            explore: stream_rng(cfg.seed, stream::EXPLORE, 0),
        })
    } else {
        None
    };

    let shuffle_seed = child_seed(cfg.seed, stream::SHUFFLE, 0);
    let mut trace = SelectionTrace::new(n_tasks);
    let mut history: Vec<MetricsReport> = Vec::new();
    let mut composites: Vec<f64> = Vec::new();
    let mut best: Option<(MtlNetwork, usize, f64)> = None;

    for epoch in 0..cfg.max_epochs {
        let batch_indices = batches(&splits.train, cfg.batch_size, shuffle_seed, epoch as u64)?;

        // The teacher decides once per epoch from the epoch-start head
        // states and the decision holds for every batch.
        let epoch_ctx = if let Some(rt) = teacher.as_mut() {
            let snapshot = net.clone();
            let states = snapshot
                .heads
                .iter()
                .map(encode_state)
                .collect::<Result<Vec<_>>>()?;
            let decision = match hooks.teacher_override {
                Some(action) => Decision::all(action, n_tasks),
                None => decide(&rt.dqn, &states, cfg.epsilon_explore, &mut rt.explore)?,
            };
            Some((snapshot, states, decision))
        } else {
            None
        };

        let mut first_row: Option<Vec<Action>> = None;
        for (bi, idx) in batch_indices.iter().enumerate() {
            let batch = splits.train.select(idx);
            let row = run_batch(&mut net, &batch, cfg, &gn, epoch_ctx.as_ref().map(|c| &c.2))
                .map_err(|e| with_epoch_context(e, epoch))?;
            if let Some(observer) = hooks.weight_observer.as_mut() {
                observer(StepKind::Student, &net.task_weights);
            }
            if bi == 0 {
                first_row = Some(row);
            }
        }

        let val_report = evaluate(&net, &splits.val)?;
        let composite = val_report.composite();

        if let Some(rt) = teacher.as_mut() {
            let (snapshot, states, _) = epoch_ctx.as_ref().expect("l2t context");
            let first_batch = splits.train.select(&batch_indices[0]);
            let mut transitions = Vec::with_capacity(2 * n_tasks);
            for t in 0..n_tasks {
                let train_labels = first_batch.task_labels(t);
                let val_labels = splits.val.task_labels(t);
                let train_view = TaskBatch {
                    x: first_batch.features_view(),
                    protected: &first_batch.protected,
                    labels: &train_labels,
                };
                let val_view = TaskBatch {
                    x: splits.val.features_view(),
                    protected: &splits.val.protected,
                    labels: &val_labels,
                };
                for action in [Action::Accuracy, Action::Fairness] {
                    let (acc, eo, next_state) = counterfactual_eval(
                        snapshot,
                        t,
                        action,
                        train_view,
                        val_view,
                        cfg.lr_student,
                    )
                    .map_err(|e| with_epoch_context(e, epoch))?;
                    let reward = compute_reward(acc, eo, rt.tracker.entry(t));
                    transitions.push(Transition {
                        task: t,
                        state: states[t].clone(),
                        action,
                        reward,
                        next_state,
                    });
                }
            }
            teacher_step(&mut rt.dqn, &transitions, &gn, cfg.lr_teacher)
                .map_err(|e| with_epoch_context(e, epoch))?;
            if let Some(observer) = hooks.weight_observer.as_mut() {
                observer(StepKind::Teacher, rt.dqn.env_weights());
            }
            rt.tracker.observe_report(&val_report);
        }

        trace.push_row(first_row.expect("nonempty training split yields batches"));
        composites.push(composite);
        history.push(val_report);
        let replace = match &best {
            Some((_, _, current)) => composite > *current,
            None => true,
        };
        if replace {
            best = Some((net.clone(), epoch, composite));
        }
        if has_converged(&composites, cfg.patience) {
            break;
        }
    }

    let (best_net, best_epoch, _) = best.expect("at least one epoch ran");
    Ok((
        TrainedModel {
            best: best_net,
            best_epoch,
            final_net: net,
            history,
        },
        trace,
    ))
}

/// One batch step under the configured method; returns the action row used.
fn run_batch(
    net: &mut MtlNetwork,
    batch: &Dataset,
    cfg: &TrainConfig,
    gn: &GradNormConfig,
    epoch_decision: Option<&Decision>,
) -> Result<Vec<Action>> {
    let n_tasks = cfg.n_tasks;
    match cfg.method {
        Method::L2t => {
            let decision = epoch_decision.expect("l2t epochs carry a decision");
            student_step(
                net,
                batch.features_view(),
                &batch.protected,
                batch.labels.view(),
                decision,
                cfg.lr_student,
                gn,
            )?;
            Ok(decision.actions().to_vec())
        }
        Method::Vanilla => {
            let decision = Decision::all_accuracy(n_tasks);
            student_step(
                net,
                batch.features_view(),
                &batch.protected,
                batch.labels.view(),
                &decision,
                cfg.lr_student,
                gn,
            )?;
            Ok(decision.0)
        }
        Method::Gfmt => {
            let (outputs, cache) = forward(net, batch.features_view())?;
            let mut losses = Vec::with_capacity(n_tasks);
            let mut actions = Vec::with_capacity(n_tasks);
            for t in 0..n_tasks {
                let labels = batch.task_labels(t);
                let acc = accuracy_loss(outputs[t].view(), &labels)?;
                let fair =
                    fairness_loss(&group_log_losses(outputs[t].view(), &labels, &batch.protected)?);
                if !acc.value.is_finite() || !fair.value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "task {t} produced a non-finite loss under greedy selection"
                    )));
                }
                let (selected, action) = greedy_select(acc, fair);
                losses.push(selected);
                actions.push(action);
            }
            student_step_with_losses(net, &cache, &losses, cfg.lr_student, gn)?;
            Ok(actions)
        }
        Method::Fixed => {
            let (outputs, cache) = forward(net, batch.features_view())?;
            let mut losses = Vec::with_capacity(n_tasks);
            for t in 0..n_tasks {
                let labels = batch.task_labels(t);
                let loss = fixed_tradeoff_loss(
                    outputs[t].view(),
                    &labels,
                    &batch.protected,
                    cfg.lambda_fixed[t],
                )?;
                if !loss.value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "task {t} produced a non-finite fixed trade-off loss"
                    )));
                }
                losses.push(loss);
            }
            student_step_with_losses(net, &cache, &losses, cfg.lr_student, gn)?;
            // No selection happens here; record the accuracy-anchored blend.
            Ok(vec![Action::Accuracy; n_tasks])
        }
        Method::Stl => Err(Error::Config(
            "stl trains per task; use train_stl or train_method".into(),
        )),
    }
}

/// Constant-prediction helper for tests and diagnostics: a network whose
/// heads always emit the given class-1 probability side.
#[doc(hidden)]
pub fn constant_predictor(d: usize, n_tasks: usize, predict_one: bool) -> MtlNetwork {
    let mut net = mlp_init(&[d, 2], n_tasks, 0).expect("valid dims");
    for layer in net.shared.layers.iter_mut() {
        layer.weights.fill(0.0);
        layer.bias.fill(0.0);
    }
    let logit = if predict_one { 20.0 } else { -20.0 };
    for head in net.heads.iter_mut() {
        head.layers[0].weights.fill(0.0);
        head.layers[0].bias = ndarray::Array1::from_vec(vec![-logit, logit]);
    }
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SynthSpec};

    fn toy_splits(n: usize, n_tasks: usize, bias: f64, seed: u64) -> DataSplits {
        let spec = SynthSpec {
            n,
            d: 4,
            n_tasks,
            bias: vec![bias; n_tasks],
            noise: 0.0,
        };
        let data = generate_synthetic(&spec, seed).unwrap();
        let (train, val, test) = split(&data, (0.6, 0.2, 0.2), seed).unwrap();
        DataSplits { train, val, test }
    }

    fn base_cfg(n_tasks: usize, method: Method) -> TrainConfig {
        TrainConfig {
            trunk_dims: vec![4, 8],
            n_tasks,
            lr_student: 0.01,
            lr_teacher: 0.005,
            lr_w: 0.01,
            gradnorm_alpha: 1.0,
            gamma: 0.9,
            epsilon_explore: 0.0,
            batch_size: 32,
            max_epochs: 3,
            patience: 10,
            seed: 42,
            lambda_fixed: vec![1.0; n_tasks],
            method,
        }
    }

    #[test]
    fn single_epoch_trace_shape() {
        let splits = toy_splits(120, 2, 0.3, 1);
        let mut cfg = base_cfg(2, Method::L2t);
        cfg.max_epochs = 1;
        let (model, trace) = train_l2tfmt(&cfg, &splits).unwrap();
        assert_eq!(trace.n_epochs(), 1);
        assert_eq!(trace.rows()[0].len(), 2);
        assert_eq!(model.epochs_run(), 1);
    }

    #[test]
    fn identical_seeds_reproduce_runs() {
        let splits = toy_splits(120, 2, 0.3, 2);
        let cfg = base_cfg(2, Method::L2t);
        let (model_a, trace_a) = train_l2tfmt(&cfg, &splits).unwrap();
        let (model_b, trace_b) = train_l2tfmt(&cfg, &splits).unwrap();
        assert_eq!(trace_a, trace_b);
        assert_eq!(model_a.final_net, model_b.final_net);
        assert_eq!(model_a.best, model_b.best);
        assert_eq!(model_a.history, model_b.history);
    }

    #[test]
    fn stub_teacher_equals_vanilla() {
        let splits = toy_splits(150, 2, 0.3, 3);
        let mut cfg = base_cfg(2, Method::L2t);
        cfg.max_epochs = 4;
        let mut hooks = TrainHooks {
            teacher_override: Some(Action::Accuracy),
            ..TrainHooks::default()
        };
        let (l2t_model, l2t_trace) = train_l2tfmt_with(&cfg, &splits, &mut hooks).unwrap();

        let mut vanilla_cfg = cfg.clone();
        vanilla_cfg.method = Method::Vanilla;
        let (vanilla_model, vanilla_trace) = train_vanilla(&vanilla_cfg, &splits).unwrap();

        assert_eq!(l2t_model.final_net, vanilla_model.final_net);
        assert_eq!(l2t_model.best, vanilla_model.best);
        assert_eq!(l2t_model.best_epoch, vanilla_model.best_epoch);
        assert_eq!(l2t_trace, vanilla_trace);
    }

    #[test]
    fn lambda_zero_equals_vanilla() {
        let splits = toy_splits(150, 2, 0.3, 4);
        let mut cfg = base_cfg(2, Method::Fixed);
        cfg.lambda_fixed = vec![0.0, 0.0];
        cfg.max_epochs = 4;
        let (fixed_model, fixed_trace) = train_fixed(&cfg, &splits).unwrap();

        let mut vanilla_cfg = cfg.clone();
        vanilla_cfg.method = Method::Vanilla;
        let (vanilla_model, vanilla_trace) = train_vanilla(&vanilla_cfg, &splits).unwrap();

        assert_eq!(fixed_model.final_net, vanilla_model.final_net);
        assert_eq!(fixed_trace, vanilla_trace);
    }

    #[test]
    fn vanilla_learns_separable_data() {
        let splits = toy_splits(400, 1, 0.0, 5);
        let mut cfg = base_cfg(1, Method::Vanilla);
        cfg.max_epochs = 30;
        cfg.batch_size = 64;
        let (model, _) = train_vanilla(&cfg, &splits).unwrap();
        let first_acc = model.history.first().unwrap().acc[0];
        let best_acc = model.history[model.best_epoch].acc[0];
        assert!(best_acc >= first_acc);
        assert!(best_acc > 0.85, "best accuracy {best_acc}");
    }

    #[test]
    fn gfmt_trace_matches_greedy_comparison() {
        let splits = toy_splits(150, 2, 0.4, 6);
        let mut cfg = base_cfg(2, Method::Gfmt);
        cfg.max_epochs = 1;
        let (_, trace) = train_gfmt(&cfg, &splits).unwrap();

        // Recompute the greedy comparison on the first batch with the
        // untrained network.
        let net = mlp_init(
            &cfg.trunk_dims,
            2,
            child_seed(cfg.seed, stream::STUDENT_INIT, 0),
        )
        .unwrap();
        let idx = batches(
            &splits.train,
            cfg.batch_size,
            child_seed(cfg.seed, stream::SHUFFLE, 0),
            0,
        )
        .unwrap();
        let batch = splits.train.select(&idx[0]);
        let (outputs, _) = forward(&net, batch.features_view()).unwrap();
        for t in 0..2 {
            let labels = batch.task_labels(t);
            let acc = accuracy_loss(outputs[t].view(), &labels).unwrap();
            let fair = fairness_loss(
                &group_log_losses(outputs[t].view(), &labels, &batch.protected).unwrap(),
            );
            let expected = if fair.value > acc.value {
                Action::Fairness
            } else {
                Action::Accuracy
            };
            assert_eq!(trace.rows()[0][t], expected);
        }
    }

    #[test]
    fn gfmt_tie_degenerates_to_vanilla() {
        // All-positive, all-protected data: the fairness loss reduces to the
        // same mean as the accuracy loss, ties go to accuracy, and the
        // trajectory matches vanilla.
        let spec = SynthSpec {
            n: 60,
            d: 4,
            n_tasks: 1,
            bias: vec![0.0],
            noise: 0.0,
        };
        let mut data = generate_synthetic(&spec, 8).unwrap();
        data.labels.fill(1);
        for s in data.protected.iter_mut() {
            *s = 1;
        }
        let (train, val, test) = split(&data, (0.5, 0.25, 0.25), 1).unwrap();
        let splits = DataSplits { train, val, test };

        let mut cfg = base_cfg(1, Method::Gfmt);
        cfg.max_epochs = 2;
        let (gfmt_model, gfmt_trace) = train_gfmt(&cfg, &splits).unwrap();
        assert!(gfmt_trace
            .rows()
            .iter()
            .all(|row| row[0] == Action::Accuracy));

        let mut vanilla_cfg = cfg.clone();
        vanilla_cfg.method = Method::Vanilla;
        let (vanilla_model, _) = train_vanilla(&vanilla_cfg, &splits).unwrap();
        assert_eq!(gfmt_model.final_net, vanilla_model.final_net);
    }

    #[test]
    fn vanilla_single_task_runs() {
        let splits = toy_splits(100, 1, 0.0, 9);
        let cfg = base_cfg(1, Method::Vanilla);
        let (model, _) = train_vanilla(&cfg, &splits).unwrap();
        assert_eq!(model.final_net.task_weights, vec![1.0]);
        assert_eq!(model.final_net.n_tasks(), 1);
    }

    #[test]
    fn stl_models_are_single_task(){
        let splits = toy_splits(100, 2, 0.2, 10);
        let mut cfg = base_cfg(2, Method::Stl);
        cfg.max_epochs = 2;
        let (model, trace) = train_stl(&cfg, &splits, 1).unwrap();
        assert_eq!(model.final_net.n_tasks(), 1);
        assert_eq!(trace.n_tasks(), 1);
        let combined = evaluate_stl(
            &[
                train_stl(&cfg, &splits, 0).unwrap().0,
                train_stl(&cfg, &splits, 1).unwrap().0,
            ],
            &splits.test,
        )
        .unwrap();
        assert_eq!(combined.acc.len(), 2);
    }

    #[test]
    fn convergence_rules() {
        assert!(!has_converged(&[0.1, 0.2, 0.3], 2));
        assert!(has_converged(&[0.5, 0.5, 0.5], 2));
        assert!(!has_converged(&[0.5], 5));
        // Improvements below the minimum delta do not reset patience.
        assert!(has_converged(&[0.5, 0.500_05, 0.500_09], 2));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let splits = toy_splits(100, 1, 0.0, 11);
        let mut cfg = base_cfg(1, Method::Vanilla);
        cfg.max_epochs = 50;
        cfg.patience = 2;
        // A huge learning rate stalls progress quickly.
        cfg.lr_student = 5.0;
        let (model, trace) = train_vanilla(&cfg, &splits).unwrap();
        assert!(model.epochs_run() < 50);
        assert_eq!(trace.n_epochs(), model.epochs_run());
    }

    #[test]
    fn best_checkpoint_is_composite_argmax() {
        let splits = toy_splits(200, 2, 0.3, 12);
        let mut cfg = base_cfg(2, Method::L2t);
        cfg.max_epochs = 6;
        let (model, _) = train_l2tfmt(&cfg, &splits).unwrap();
        let composites: Vec<f64> = model.history.iter().map(MetricsReport::composite).collect();
        let max = composites.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(composites[model.best_epoch], max);
        // First epoch attaining the max wins.
        let first_max = composites.iter().position(|&c| c == max).unwrap();
        assert_eq!(model.best_epoch, first_max);
    }

    #[test]
    fn evaluate_constant_predictor_hits_base_rate() {
        let splits = toy_splits(100, 2, 0.3, 13);
        let net = constant_predictor(4, 2, true);
        let report = evaluate(&net, &splits.test).unwrap();
        for t in 0..2 {
            let labels = splits.test.task_labels(t);
            let rate =
                labels.iter().map(|&y| f64::from(y)).sum::<f64>() / labels.len() as f64;
            assert!((report.acc[t] - rate).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_group_blind_perfection_is_fair() {
        // A predictor that reproduces the labels exactly has zero violation.
        let splits = toy_splits(100, 1, 0.5, 14);
        let labels = splits.test.task_labels(0);
        let rates = confusion_by_group(&labels, &labels, &splits.test.protected).unwrap();
        assert_eq!(eo_violation(&rates), 0.0);
    }

    #[test]
    fn evaluate_matches_brute_force_counts() {
        let splits = toy_splits(90, 2, 0.4, 15);
        let small = splits.test.select(&(0..18).collect::<Vec<_>>());
        let net = mlp_init(&[4, 6], 2, 77).unwrap();
        let report = evaluate(&net, &small).unwrap();

        let (outputs, _) = forward(&net, small.features_view()).unwrap();
        for t in 0..2 {
            let labels = small.task_labels(t);
            let mut agree = 0usize;
            let mut counts = [[0u64; 4]; 2]; // [group][tp, fn, fp, tn]
            for i in 0..small.n() {
                let pred = u8::from(outputs[t][(i, 1)] >= 0.5);
                if pred == labels[i] {
                    agree += 1;
                }
                let g = small.protected[i] as usize;
                match (labels[i], pred) {
                    (1, 1) => counts[g][0] += 1,
                    (1, 0) => counts[g][1] += 1,
                    (0, 1) => counts[g][2] += 1,
                    (0, 0) => counts[g][3] += 1,
                    _ => unreachable!(),
                }
            }
            assert!((report.acc[t] - agree as f64 / small.n() as f64).abs() < 1e-15);

            let rate = |cell: [u64; 4]| -> (Option<f64>, Option<f64>) {
                let pos = cell[0] + cell[1];
                let neg = cell[2] + cell[3];
                (
                    (pos > 0).then(|| cell[1] as f64 / pos as f64),
                    (neg > 0).then(|| cell[2] as f64 / neg as f64),
                )
            };
            let (fnr_g, fpr_g) = rate(counts[1]);
            let (fnr_o, fpr_o) = rate(counts[0]);
            let mut expected = 0.0;
            if let (Some(a), Some(b)) = (fnr_g, fnr_o) {
                expected += (a - b).abs();
            }
            if let (Some(a), Some(b)) = (fpr_g, fpr_o) {
                expected += (a - b).abs();
            }
            assert!((report.eo[t] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn trace_fractions() {
        let mut trace = SelectionTrace::new(2);
        trace.push_row(vec![Action::Accuracy, Action::Fairness]);
        trace.push_row(vec![Action::Accuracy, Action::Accuracy]);
        assert_eq!(trace.action_fraction(0, Action::Accuracy), 1.0);
        assert_eq!(trace.action_fraction(1, Action::Fairness), 0.5);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = base_cfg(2, Method::Fixed);
        cfg.lambda_fixed = vec![1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg(2, Method::L2t);
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_cfg(2, Method::L2t);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
