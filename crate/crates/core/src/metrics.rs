//! Group-conditional confusion rates, equalized-odds violation, accuracy,
//! and the relative ARA/AREO aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to single-task EO violations used as AREO denominators.
pub const EO_DENOMINATOR_FLOOR: f64 = 1e-4;

/// Confusion counts for one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl GroupCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// True positive rate; `None` when the group has no positives.
    pub fn tpr(&self) -> Option<f64> {
        let denom = self.true_pos + self.false_neg;
        (denom > 0).then(|| self.true_pos as f64 / denom as f64)
    }

    /// False negative rate, `1 - tpr`.
    pub fn fnr(&self) -> Option<f64> {
        self.tpr().map(|tpr| 1.0 - tpr)
    }

    /// False positive rate; `None` when the group has no negatives.
    pub fn fpr(&self) -> Option<f64> {
        let denom = self.false_pos + self.true_neg;
        (denom > 0).then(|| self.false_pos as f64 / denom as f64)
    }
}

/// Confusion counts split by the protected attribute (`protected` is the
/// group with `S = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupRates {
    pub protected: GroupCounts,
    pub non_protected: GroupCounts,
}

/// Per-task evaluation results, with relative aggregates when a single-task
/// reference is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Per-task accuracy in `[0, 1]`.
    pub acc: Vec<f64>,
    /// Per-task equalized-odds violation in `[0, 2]`.
    pub eo: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ara: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub areo: Option<f64>,
}

impl MetricsReport {
    pub fn n_tasks(&self) -> usize {
        self.acc.len()
    }

    /// Mean over tasks of `acc_t - eo_t`; the validation score used for
    /// checkpointing and convergence.
    pub fn composite(&self) -> f64 {
        let t = self.acc.len() as f64;
        self.acc
            .iter()
            .zip(&self.eo)
            .map(|(a, e)| a - e)
            .sum::<f64>()
            / t
    }
}

/// Partitions `n` instances into per-group confusion counts.
pub fn confusion_by_group(pred: &[u8], label: &[u8], protected: &[u8]) -> Result<GroupRates> {
    if pred.len() != label.len() || pred.len() != protected.len() {
        return Err(Error::Shape(format!(
            "prediction/label/protected lengths differ: {}/{}/{}",
            pred.len(),
            label.len(),
            protected.len()
        )));
    }
    let mut rates = GroupRates::default();
    for i in 0..pred.len() {
        let group = if protected[i] == 1 {
            &mut rates.protected
        } else {
            &mut rates.non_protected
        };
        match (label[i] == 1, pred[i] == 1) {
            (true, true) => group.true_pos += 1,
            (true, false) => group.false_neg += 1,
            (false, true) => group.false_pos += 1,
            (false, false) => group.true_neg += 1,
        }
    }
    Ok(rates)
}

/// Equalized-odds violation: `|FNR_g - FNR_g'| + |FPR_g - FPR_g'|`.
///
/// A rate that is undefined in either group (empty denominator) contributes 0
/// to its term, so the result stays total and within `[0, 2]`.
pub fn eo_violation(rates: &GroupRates) -> f64 {
    let fnr_gap = match (rates.protected.fnr(), rates.non_protected.fnr()) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => 0.0,
    };
    let fpr_gap = match (rates.protected.fpr(), rates.non_protected.fpr()) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => 0.0,
    };
    fnr_gap + fpr_gap
}

/// Fraction of agreeing entries.
pub fn accuracy(pred: &[u8], label: &[u8]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!(
            "prediction/label lengths differ: {}/{}",
            pred.len(),
            label.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyEvaluation(
            "accuracy over zero instances".to_string(),
        ));
    }
    let agree = pred.iter().zip(label).filter(|(p, l)| p == l).count();
    Ok(agree as f64 / pred.len() as f64)
}

/// Average relative accuracy and EO of a multi-task report against a
/// single-task reference: `ARA = mean_t acc_mtl / acc_stl` and
/// `AREO = mean_t eo_mtl / max(eo_stl, 1e-4)`.
pub fn relative_report(mtl: &MetricsReport, stl: &MetricsReport) -> Result<(f64, f64)> {
    if mtl.n_tasks() != stl.n_tasks() || mtl.eo.len() != stl.eo.len() {
        return Err(Error::Shape(format!(
            "reports cover {} vs {} tasks",
            mtl.n_tasks(),
            stl.n_tasks()
        )));
    }
    if let Some(bad) = stl.acc.iter().position(|&a| a <= 0.0) {
        return Err(Error::Contract(format!(
            "single-task accuracy for task {bad} must be positive"
        )));
    }
    let t = mtl.n_tasks() as f64;
    let ara = mtl
        .acc
        .iter()
        .zip(&stl.acc)
        .map(|(m, s)| m / s)
        .sum::<f64>()
        / t;
    let areo = mtl
        .eo
        .iter()
        .zip(&stl.eo)
        .map(|(m, s)| m / s.max(EO_DENOMINATOR_FLOOR))
        .sum::<f64>()
        / t;
    Ok((ara, areo))
}

/// Hard predictions from class-1 probabilities: `p >= 0.5` maps to class 1.
pub fn threshold_predictions(prob_class1: impl IntoIterator<Item = f64>) -> Vec<u8> {
    prob_class1
        .into_iter()
        .map(|p| u8::from(p >= 0.5))
        .collect()
}
