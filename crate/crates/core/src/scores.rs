//! Non-conformity scores, the finite-sample conformal quantile, and the
//! prediction sets and intervals built from a threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Aps,
    Cqr,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Aps => "aps",
            ScoreKind::Cqr => "cqr",
        }
    }
}

/// Conformal threshold `η̂`. `Full` stands in for a quantile level above one,
/// where every label must be admitted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold<T> {
    Value(T),
    Full,
}

impl<T: Scalar> Threshold<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Threshold::Value(v) => Some(v),
            Threshold::Full => None,
        }
    }

    pub fn is_full(self) -> bool {
        matches!(self, Threshold::Full)
    }

    /// Whether a score is admitted: `score ≤ η̂`, always true for `Full`.
    pub fn admits(self, score: T) -> bool {
        match self {
            Threshold::Value(eta) => score <= eta,
            Threshold::Full => true,
        }
    }
}

/// Rank `⌈(n+1)(1−α)⌉` of the calibration score used as threshold.
///
/// Products within 1e-9 of an integer are snapped to it, so levels that are
/// exactly one in real arithmetic (e.g. n=9, α=0.1) are not pushed over.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Rejects miscoverage levels outside the open interval (0, 1).
pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// The `(1−α)(1+1/n)` empirical quantile of `scores`: the `⌈(n+1)(1−α)⌉`-th
/// smallest score, or [`Threshold::Full`] when that rank exceeds `n`.
pub fn conformal_quantile<T: Scalar>(scores: &[T], alpha: f64) -> Result<Threshold<T>> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::invalid("conformal quantile of an empty score list"));
    }
    let n = scores.len();
    let k = conformal_rank(n, alpha);
    if k > n {
        return Ok(Threshold::Full);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(Threshold::Value(sorted[k.max(1) - 1]))
}

/// Classes by descending probability, ties by ascending class index.
pub fn descending_classes<T: Scalar>(probs: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// APS scores of every class: the cumulative probability of all classes
/// ranked at or above it.
pub fn aps_scores_all<T: Scalar>(probs: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); probs.len()];
    let mut cum = T::zero();
    for c in descending_classes(probs) {
        cum += probs[c];
        out[c] = cum;
    }
    out
}

/// APS non-conformity score of `label`.
pub fn aps_score<T: Scalar>(probs: &[T], label: usize) -> Result<T> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} outside {} classes",
            probs.len()
        )));
    }
    let mut cum = T::zero();
    for c in descending_classes(probs) {
        cum += probs[c];
        if c == label {
            break;
        }
    }
    Ok(cum)
}

/// Prediction set `{k : V(x, k) ≤ η̂}`, listed by descending probability.
/// Since APS scores grow along that order, the set is a prefix of it.
pub fn aps_set<T: Scalar>(probs: &[T], t: Threshold<T>) -> Vec<usize> {
    let order = descending_classes(probs);
    let Threshold::Value(eta) = t else {
        return order;
    };
    let mut cum = T::zero();
    let mut take = 0;
    for &c in &order {
        cum += probs[c];
        if cum > eta {
            break;
        }
        take += 1;
    }
    order[..take].to_vec()
}

/// CQR score `max(lo − y, y − hi)`; negative inside the band.
pub fn cqr_score<T: Scalar>(lo: T, hi: T, y: T) -> T {
    (lo - y).max(y - hi)
}

/// `[lo − η̂, hi + η̂]`. Membership is decided through the score, so
/// `contains(y) ⇔ cqr_score(lo, hi, y) ≤ η̂` holds bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqrInterval<T> {
    pub base_lo: T,
    pub base_hi: T,
    pub eta: T,
}

impl<T: Scalar> CqrInterval<T> {
    pub fn lower(&self) -> T {
        self.base_lo - self.eta
    }

    pub fn upper(&self) -> T {
        self.base_hi + self.eta
    }

    /// `max(0, (hi − lo) + 2η̂)`; zero when a negative `η̂` inverts the band.
    pub fn length(&self) -> T {
        let len = (self.base_hi - self.base_lo) + self.eta + self.eta;
        len.max(T::zero())
    }

    pub fn contains(&self, y: T) -> bool {
        cqr_score(self.base_lo, self.base_hi, y) <= self.eta
    }
}

pub fn cqr_interval<T: Scalar>(lo: T, hi: T, t: Threshold<T>) -> Result<CqrInterval<T>> {
    match t {
        Threshold::Value(eta) => Ok(CqrInterval {
            base_lo: lo,
            base_hi: hi,
            eta,
        }),
        Threshold::Full => Err(Error::FullThreshold),
    }
}
