//! Split conformal prediction over graph node splits.
//!
//! Calibration reads labels of calibration nodes only. Test labels enter
//! exclusively through [`evaluate`], after every set or interval has been
//! built.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{split_pool, DataSplit, Labels};
use crate::scalar::Scalar;
use crate::scores::{self, CqrInterval, ScoreKind, Threshold};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult<T> {
    pub threshold: Threshold<T>,
    pub n: usize,
    pub alpha: f64,
    pub kind: ScoreKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction<T> {
    /// APS set, classes in descending probability order.
    Set(Vec<usize>),
    Interval(CqrInterval<T>),
}

impl<T: Scalar> Prediction<T> {
    /// Set size, or interval length (infinite for a `Full` threshold).
    pub fn size(&self) -> f64 {
        match self {
            Prediction::Set(s) => s.len() as f64,
            Prediction::Interval(iv) => iv.length().as_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome<T> {
    pub calibration: CalibrationResult<T>,
    pub predictions: Vec<Prediction<T>>,
    pub coverage: f64,
    pub inefficiency: f64,
}

fn check_compat<T: Scalar>(scores: &Tensor<T>, labels: &Labels, kind: ScoreKind) -> Result<()> {
    if scores.rows() != labels.len() {
        return Err(Error::shape(
            "conformal",
            format!("{} score rows vs {} labels", scores.rows(), labels.len()),
        ));
    }
    match (kind, labels) {
        (ScoreKind::Aps, Labels::Classes { num_classes, .. }) if scores.cols() == *num_classes => Ok(()),
        (ScoreKind::Cqr, Labels::Targets(_)) if scores.cols() == 2 => Ok(()),
        _ => Err(Error::invalid(format!(
            "score kind {} does not fit a {}-column score matrix with these labels",
            kind.name(),
            scores.cols()
        ))),
    }
}

fn node_score<T: Scalar>(scores: &Tensor<T>, labels: &Labels, kind: ScoreKind, v: usize) -> Result<T> {
    let row = scores.row(v);
    match (kind, labels) {
        (ScoreKind::Aps, Labels::Classes { y, .. }) => scores::aps_score(row, y[v]),
        (ScoreKind::Cqr, Labels::Targets(y)) => Ok(scores::cqr_score(row[0], row[1], T::of(y[v]))),
        _ => Err(Error::invalid("score kind does not match the label type")),
    }
}

/// Non-conformity score of each listed node against its true label.
pub fn nonconformity<T: Scalar>(
    scores: &Tensor<T>,
    labels: &Labels,
    kind: ScoreKind,
    nodes: &[usize],
) -> Result<Vec<T>> {
    check_compat(scores, labels, kind)?;
    nodes.iter().map(|&v| node_score(scores, labels, kind, v)).collect()
}

pub fn calibrate<T: Scalar>(
    scores: &Tensor<T>,
    labels: &Labels,
    calib: &[usize],
    alpha: f64,
    kind: ScoreKind,
) -> Result<CalibrationResult<T>> {
    if calib.is_empty() {
        return Err(Error::invalid("empty calibration set"));
    }
    let s = nonconformity(scores, labels, kind, calib)?;
    Ok(CalibrationResult {
        threshold: scores::conformal_quantile(&s, alpha)?,
        n: calib.len(),
        alpha,
        kind,
    })
}

/// Builds sets or intervals from scores alone.
pub fn predict<T: Scalar>(
    scores: &Tensor<T>,
    nodes: &[usize],
    cal: &CalibrationResult<T>,
) -> Result<Vec<Prediction<T>>> {
    nodes
        .iter()
        .map(|&v| {
            if v >= scores.rows() {
                return Err(Error::invalid(format!("node {v} outside the score matrix")));
            }
            let row = scores.row(v);
            Ok(match cal.kind {
                ScoreKind::Aps => Prediction::Set(scores::aps_set(row, cal.threshold)),
                ScoreKind::Cqr => {
                    let eta = cal.threshold.value().unwrap_or_else(T::infinity);
                    Prediction::Interval(CqrInterval {
                        base_lo: row[0],
                        base_hi: row[1],
                        eta,
                    })
                }
            })
        })
        .collect()
}

/// Coverage and inefficiency of `predictions` for `nodes`.
pub fn evaluate<T: Scalar>(predictions: &[Prediction<T>], labels: &Labels, nodes: &[usize]) -> Result<(f64, f64)> {
    if predictions.len() != nodes.len() || nodes.is_empty() {
        return Err(Error::invalid("one prediction per test node required"));
    }
    let mut covered = 0usize;
    let mut size = 0.0;
    for (p, &v) in predictions.iter().zip(nodes) {
        let hit = match (p, labels) {
            (Prediction::Set(s), Labels::Classes { y, .. }) => s.contains(&y[v]),
            (Prediction::Interval(iv), Labels::Targets(y)) => iv.contains(T::of(y[v])),
            _ => return Err(Error::invalid("prediction type does not match the labels")),
        };
        covered += hit as usize;
        size += p.size();
    }
    let m = nodes.len() as f64;
    Ok((covered as f64 / m, size / m))
}

pub fn calibrate_and_predict<T: Scalar>(
    scores: &Tensor<T>,
    labels: &Labels,
    calib: &[usize],
    test: &[usize],
    alpha: f64,
    kind: ScoreKind,
) -> Result<SplitOutcome<T>> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let calibration = calibrate(scores, labels, calib, alpha, kind)?;
    let predictions = predict(scores, test, &calibration)?;
    let (coverage, inefficiency) = evaluate(&predictions, labels, test)?;
    Ok(SplitOutcome {
        calibration,
        predictions,
        coverage,
        inefficiency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub coverage: f64,
    pub ineff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub alpha: f64,
    pub score: ScoreKind,
    /// Calibration and test sizes shared by every split.
    pub n: usize,
    pub m: usize,
    pub splits: Vec<SplitRecord>,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub ineff_mean: f64,
    pub ineff_std: f64,
}

impl CoverageReport {
    pub fn coverages(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.coverage).collect()
    }

    pub fn ineffs(&self) -> Vec<f64> {
        self.splits.iter().map(|s| s.ineff).collect()
    }

    /// Number of covered test nodes per split, recovered from the coverage
    /// fractions.
    pub fn covered_counts(&self) -> Vec<usize> {
        self.splits
            .iter()
            .map(|s| (s.coverage * self.m as f64).round() as usize)
            .collect()
    }
}

/// Re-draws calibration/test sets from `pool` for seeds
/// `base_seed, base_seed+1, …` and aggregates coverage and inefficiency.
/// The score matrix is fixed across splits.
pub fn run_splits<T: Scalar>(
    scores: &Tensor<T>,
    labels: &Labels,
    pool: &[usize],
    calib_cap: usize,
    alpha: f64,
    kind: ScoreKind,
    num_splits: usize,
    base_seed: u64,
) -> Result<CoverageReport> {
    if num_splits == 0 {
        return Err(Error::invalid("num_splits must be positive"));
    }
    check_compat(scores, labels, kind)?;
    let (c0, t0) = split_pool(pool, calib_cap, base_seed)?;
    let (n, m) = (c0.len(), t0.len());
    let splits: Vec<SplitRecord> = (0..num_splits)
        .into_par_iter()
        .map(|s| {
            let seed = base_seed.wrapping_add(s as u64);
            let (calib, test) = split_pool(pool, calib_cap, seed)?;
            let out = calibrate_and_predict(scores, labels, &calib, &test, alpha, kind)?;
            Ok(SplitRecord {
                seed,
                coverage: out.coverage,
                ineff: out.inefficiency,
            })
        })
        .collect::<Result<_>>()?;
    let cov: Vec<f64> = splits.iter().map(|s| s.coverage).collect();
    let ineff: Vec<f64> = splits.iter().map(|s| s.ineff).collect();
    Ok(CoverageReport {
        alpha,
        score: kind,
        n,
        m,
        coverage_mean: stats::mean(&cov),
        coverage_std: stats::std_dev(&cov),
        ineff_mean: stats::mean(&ineff),
        ineff_std: stats::std_dev(&ineff),
        splits,
    })
}

/// Reassigns `calib ∪ test` through `perm` (position `i` of the sorted pool
/// receives pool node `perm[i]`'s role) and checks that every node's
/// non-conformity score is bit-identical under both assignments.
///
/// `scorer` receives the split it is evaluated under, so any dependence of
/// the scores on set membership is exposed.
pub fn permutation_invariance_check<T, F>(
    split: &DataSplit,
    perm: &[usize],
    labels: &Labels,
    kind: ScoreKind,
    scorer: F,
) -> Result<bool>
where
    T: Scalar,
    F: Fn(&DataSplit) -> Result<Tensor<T>>,
{
    let pool = split.held_out();
    crate::graph::check_permutation(perm, pool.len())?;
    let is_calib: Vec<bool> = pool.iter().map(|v| split.calib.binary_search(v).is_ok()).collect();
    let mut calib = Vec::new();
    let mut test = Vec::new();
    for (i, &p) in perm.iter().enumerate() {
        if is_calib[i] {
            calib.push(pool[p]);
        } else {
            test.push(pool[p]);
        }
    }
    calib.sort_unstable();
    test.sort_unstable();
    let moved = DataSplit {
        train: split.train.clone(),
        valid: split.valid.clone(),
        calib,
        test,
    };
    let before = nonconformity(&scorer(split)?, labels, kind, &pool)?;
    let after = nonconformity(&scorer(&moved)?, labels, kind, &pool)?;
    Ok(before.iter().zip(&after).all(|(a, b)| a.to_bits_eq(*b)))
}

trait BitEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Scalar> BitEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        let (a, b) = (self.as_f64(), other.as_f64());
        a.to_bits() == b.to_bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class() -> (Tensor<f64>, Labels) {
        let probs = Tensor::matrix(4, 2, vec![0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.6, 0.4]).unwrap();
        let labels = Labels::Classes {
            num_classes: 2,
            y: vec![0, 0, 1, 1],
        };
        (probs, labels)
    }

    #[test]
    fn full_threshold_gives_every_class() {
        let (p, y) = two_class();
        let out = calibrate_and_predict(&p, &y, &[0], &[2, 3], 0.1, ScoreKind::Aps).unwrap();
        assert!(out.calibration.threshold.is_full());
        assert_eq!(out.coverage, 1.0);
        assert_eq!(out.inefficiency, 2.0);
    }

    #[test]
    fn duality_example() {
        let (p, y) = two_class();
        let cal = CalibrationResult {
            threshold: Threshold::Value(0.5),
            n: 1,
            alpha: 0.5,
            kind: ScoreKind::Aps,
        };
        let preds = predict(&p, &[0], &cal).unwrap();
        assert_eq!(preds[0], Prediction::Set(vec![]));
        assert_eq!(evaluate(&preds, &y, &[0]).unwrap(), (0.0, 0.0));
        let cal = CalibrationResult {
            threshold: Threshold::Value(0.9),
            ..cal
        };
        let preds = predict(&p, &[0], &cal).unwrap();
        assert_eq!(preds[0], Prediction::Set(vec![0]));
        assert_eq!(evaluate(&preds, &y, &[0]).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn empty_sets_rejected() {
        let (p, y) = two_class();
        assert!(calibrate_and_predict(&p, &y, &[], &[1], 0.1, ScoreKind::Aps).is_err());
        assert!(calibrate_and_predict(&p, &y, &[0], &[], 0.1, ScoreKind::Aps).is_err());
        assert!(calibrate_and_predict(&p, &y, &[0], &[1], 0.1, ScoreKind::Cqr).is_err());
    }

    #[test]
    fn cqr_full_threshold_is_unbounded() {
        let q = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = Labels::Targets(vec![0.5, 9.0]);
        let out = calibrate_and_predict(&q, &y, &[0], &[1], 0.2, ScoreKind::Cqr).unwrap();
        assert_eq!(out.coverage, 1.0);
        assert!(out.inefficiency.is_infinite());
    }

    #[test]
    fn run_splits_is_deterministic() {
        let n = 60;
        let probs: Vec<f64> = (0..n).flat_map(|i| {
            let a = 0.5 + 0.49 * ((i * 37 % 101) as f64 / 101.0);
            [a, 1.0 - a]
        }).collect();
        let p = Tensor::matrix(n, 2, probs).unwrap();
        let y = Labels::Classes {
            num_classes: 2,
            y: (0..n).map(|i| (i * 7 % 3 == 0) as usize).collect(),
        };
        let pool: Vec<usize> = (0..n).collect();
        let a = run_splits(&p, &y, &pool, 20, 0.1, ScoreKind::Aps, 2, 5).unwrap();
        let b = run_splits(&p, &y, &pool, 20, 0.1, ScoreKind::Aps, 2, 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!((a.n, a.m), (20, 40));
        assert!((0.0..=1.0).contains(&a.coverage_mean) && a.coverage_std >= 0.0);
    }

    #[test]
    fn swapping_roles_keeps_scores() {
        let (p, y) = two_class();
        let split = DataSplit {
            train: vec![],
            valid: vec![],
            calib: vec![0, 1],
            test: vec![2, 3],
        };
        for perm in [[0, 1, 2, 3], [2, 1, 0, 3], [3, 2, 1, 0]] {
            let ok = permutation_invariance_check(&split, &perm, &y, ScoreKind::Aps, |_| Ok(p.clone())).unwrap();
            assert!(ok);
        }
        // A scorer that reads membership is caught.
        let leaky = |s: &DataSplit| {
            let mut q = p.clone();
            for &v in &s.calib {
                q.data_mut()[2 * v] = 0.5;
                q.data_mut()[2 * v + 1] = 0.5;
            }
            Ok(q)
        };
        assert!(!permutation_invariance_check(&split, &[2, 1, 0, 3], &y, ScoreKind::Aps, leaky).unwrap());
    }
}
