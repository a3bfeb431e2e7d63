//! The two selectable training objectives — accuracy loss and worst-group
//! fairness loss — plus the fixed trade-off and greedy compositions used by
//! the baselines.
//!
//! Every loss returns its value together with the gradient w.r.t. the head's
//! output probabilities, ready to feed into `nn::backward`. Losses are means
//! (per batch, per group) rather than raw sums so their scales are batch- and
//! group-size-invariant; log arguments are clamped at 1e-12.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log arguments are clamped below at this value.
pub const LOG_CLAMP: f64 = 1e-12;

/// Which objective a task trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Accuracy,
    Fairness,
}

impl Action {
    pub fn as_char(self) -> char {
        match self {
            Action::Accuracy => 'A',
            Action::Fairness => 'F',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A' => Some(Action::Accuracy),
            'F' => Some(Action::Fairness),
            _ => None,
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// A scalar loss with its gradient w.r.t. the `[n × 2]` head output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_prob: Array2<f64>,
}

impl LossValue {
    fn zero(n: usize) -> Self {
        LossValue {
            value: 0.0,
            d_prob: Array2::zeros((n, 2)),
        }
    }
}

/// One group-conditional log-loss term (mean over its instance set).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTerm {
    pub value: f64,
    pub count: usize,
    pub d_prob: Array2<f64>,
}

impl GroupTerm {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// The four group log-loss terms behind the fairness loss: FNR-type terms are
/// log losses over each group's positives, FPR-type over each group's
/// negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLossTerms {
    pub fnr_protected: GroupTerm,
    pub fnr_non_protected: GroupTerm,
    pub fpr_protected: GroupTerm,
    pub fpr_non_protected: GroupTerm,
}

fn check_lengths(p: &ArrayView2<'_, f64>, y: &[u8], s: Option<&[u8]>) -> Result<usize> {
    let n = p.nrows();
    if p.ncols() != 2 {
        return Err(Error::Shape(format!(
            "probabilities must have 2 columns, got {}",
            p.ncols()
        )));
    }
    if y.len() != n || s.map_or(false, |s| s.len() != n) {
        return Err(Error::Shape(format!(
            "probabilities cover {n} rows but labels/groups do not"
        )));
    }
    Ok(n)
}

/// Mean negative log-likelihood of the labels under `p[:, 1] = P(Y=1)`.
pub fn accuracy_loss(p: ArrayView2<'_, f64>, y: &[u8]) -> Result<LossValue> {
    let n = check_lengths(&p, y, None)?;
    if n == 0 {
        return Err(Error::EmptyEvaluation("accuracy loss on empty batch".into()));
    }
    let scale = 1.0 / n as f64;
    let mut value = 0.0;
    let mut d_prob = Array2::zeros((n, 2));
    for i in 0..n {
        let p1 = p[(i, 1)];
        if y[i] == 1 {
            value -= scale * p1.max(LOG_CLAMP).ln();
            if p1 > LOG_CLAMP {
                d_prob[(i, 1)] = -scale / p1;
            }
        } else {
            let q = 1.0 - p1;
            value -= scale * q.max(LOG_CLAMP).ln();
            if q > LOG_CLAMP {
                d_prob[(i, 1)] = scale / q;
            }
        }
    }
    Ok(LossValue { value, d_prob })
}

/// Group-conditional mean log losses: for each group, the negative
/// log-likelihood over its positives (FNR-type) and over its negatives
/// (FPR-type). Empty sets yield a zero term marked empty.
pub fn group_log_losses(
    p: ArrayView2<'_, f64>,
    y: &[u8],
    s: &[u8],
) -> Result<GroupLossTerms> {
    let n = check_lengths(&p, y, Some(s))?;
    let term = |positive: bool, protected: bool| -> GroupTerm {
        let members: Vec<usize> = (0..n)
            .filter(|&i| (y[i] == 1) == positive && (s[i] == 1) == protected)
            .collect();
        let count = members.len();
        let mut value = 0.0;
        let mut d_prob = Array2::zeros((n, 2));
        if count > 0 {
            let scale = 1.0 / count as f64;
            for &i in &members {
                let p1 = p[(i, 1)];
                if positive {
                    value -= scale * p1.max(LOG_CLAMP).ln();
                    if p1 > LOG_CLAMP {
                        d_prob[(i, 1)] = -scale / p1;
                    }
                } else {
                    let q = 1.0 - p1;
                    value -= scale * q.max(LOG_CLAMP).ln();
                    if q > LOG_CLAMP {
                        d_prob[(i, 1)] = scale / q;
                    }
                }
            }
        }
        GroupTerm {
            value,
            count,
            d_prob,
        }
    };
    Ok(GroupLossTerms {
        fnr_protected: term(true, true),
        fnr_non_protected: term(true, false),
        fpr_protected: term(false, true),
        fpr_non_protected: term(false, false),
    })
}

/// Worst-group log loss: `max(FNR_g, FNR_g') + max(FPR_g, FPR_g')`.
///
/// The gradient flows through the arg-max term of each pair only; ties break
/// toward the protected group. Empty terms are excluded from their max, and a
/// pair with both terms empty contributes 0.
pub fn fairness_loss(terms: &GroupLossTerms) -> LossValue {
    let n = terms.fnr_protected.d_prob.nrows();
    let pick = |protected: &GroupTerm, non_protected: &GroupTerm| -> Option<LossValue> {
        match (protected.is_empty(), non_protected.is_empty()) {
            (true, true) => None,
            (false, true) => Some(LossValue {
                value: protected.value,
                d_prob: protected.d_prob.clone(),
            }),
            (true, false) => Some(LossValue {
                value: non_protected.value,
                d_prob: non_protected.d_prob.clone(),
            }),
            (false, false) => {
                let chosen = if protected.value >= non_protected.value {
                    protected
                } else {
                    non_protected
                };
                Some(LossValue {
                    value: chosen.value,
                    d_prob: chosen.d_prob.clone(),
                })
            }
        }
    };
    let fnr = pick(&terms.fnr_protected, &terms.fnr_non_protected);
    let fpr = pick(&terms.fpr_protected, &terms.fpr_non_protected);
    let mut out = LossValue::zero(n);
    for part in [fnr, fpr].into_iter().flatten() {
        out.value += part.value;
        out.d_prob = out.d_prob + part.d_prob;
    }
    out
}

/// `accuracy_loss + lambda * fairness_loss`. With `lambda = 0` this is the
/// accuracy loss bit-for-bit.
pub fn fixed_tradeoff_loss(
    p: ArrayView2<'_, f64>,
    y: &[u8],
    s: &[u8],
    lambda: f64,
) -> Result<LossValue> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "fairness trade-off lambda {lambda} must be nonnegative"
        )));
    }
    let acc = accuracy_loss(p, y)?;
    if lambda == 0.0 {
        return Ok(acc);
    }
    let fair = fairness_loss(&group_log_losses(p, y, s)?);
    Ok(LossValue {
        value: acc.value + lambda * fair.value,
        d_prob: acc.d_prob + fair.d_prob.mapv(|v| lambda * v),
    })
}

/// Picks whichever loss currently has the larger value (the greedy
/// worst-case choice); ties go to the accuracy loss.
pub fn greedy_select(acc: LossValue, fair: LossValue) -> (LossValue, Action) {
    if fair.value > acc.value {
        (fair, Action::Fairness)
    } else {
        (acc, Action::Accuracy)
    }
}
