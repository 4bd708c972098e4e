//! Topology-aware correction of frozen base predictions.
//!
//! A second GCN maps the base scores `μ̂` to corrected scores `μ̃` and is
//! trained to shrink a differentiable stand-in for the conformal set size
//! (classification) or interval length (regression). The stand-in is
//! computed on nodes withheld from the calibration set; the remaining
//! calibration nodes are left untouched for the final conformal step.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::{GcnModel, Head, ModelDoc, Mode};
use crate::graph::{Graph, Labels, NodeData, Task};
use crate::rng;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Orientation of the soft membership `c_{i,k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipSign {
    /// `σ((η̂ − V)/τ)`: close to one exactly when class `k` would be in the set.
    #[default]
    BelowThreshold,
    /// `σ((V − η̂)/τ)`.
    AboveThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    /// Fraction of calibration nodes withheld for training the correction.
    pub gamma: f64,
    pub tau: f64,
    /// Weight of the consistency term pulling `μ̃` towards `μ̂` (regression).
    pub reg_coeff: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub seed: u64,
    pub alpha: f64,
    pub sign: MembershipSign,
    /// Redraw the cor-calib / cor-test halves every epoch.
    pub resample: bool,
    /// Label-free epochs fitting `μ̃ ≈ μ̂` on every node before the
    /// inefficiency objective takes over.
    pub warmup_epochs: usize,
    /// Adds the base scores back onto the GCN output (log-probabilities for
    /// classification), so a zero network leaves `μ̂` unchanged.
    pub residual: bool,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            tau: 1.0,
            reg_coeff: 1.0,
            epochs: 200,
            lr: 1e-3,
            weight_decay: 0.0,
            hidden: 64,
            layers: 2,
            dropout: 0.0,
            seed: 0,
            alpha: 0.1,
            sign: MembershipSign::BelowThreshold,
            resample: false,
            warmup_epochs: 100,
            residual: false,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!(
                "gamma {} must lie in (0, 1) so calibration nodes remain",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.reg_coeff >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("reg_coeff and weight_decay must be non-negative"));
        }
        if self.epochs == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::invalid("epochs, hidden and layers must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        crate::scores::check_alpha(self.alpha)
    }
}

/// Partition of the calibration nodes. Each part is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionSplit {
    pub cor_calib: Vec<usize>,
    pub cor_test: Vec<usize>,
    pub remaining_calib: Vec<usize>,
}

fn withheld_count(n: usize, gamma: f64) -> usize {
    (gamma * n as f64 + 1e-9).floor() as usize
}

fn feasible(n: usize, gamma: f64) -> bool {
    let w = withheld_count(n, gamma);
    w / 2 >= 2 && w - w / 2 >= 2 && n > w
}

impl CorrectionSplit {
    /// Withholds `⌊γ·|calib|⌋` nodes and halves them into cor-calib and
    /// cor-test.
    pub fn draw(calib: &[usize], gamma: f64, seed: u64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {gamma} must lie in (0, 1)")));
        }
        if !feasible(calib.len(), gamma) {
            let required = (1..=1_000_000).find(|&n| feasible(n, gamma)).unwrap_or(usize::MAX);
            return Err(Error::InsufficientCalibration {
                required,
                available: calib.len(),
            });
        }
        let mut nodes = calib.to_vec();
        nodes.sort_unstable();
        nodes.shuffle(&mut rng::derive(seed, 0xC0));
        let w = withheld_count(nodes.len(), gamma);
        let mut remaining = nodes.split_off(w);
        let mut cor_test = nodes.split_off(w / 2);
        let mut cor_calib = nodes;
        cor_calib.sort_unstable();
        cor_test.sort_unstable();
        remaining.sort_unstable();
        Ok(Self {
            cor_calib,
            cor_test,
            remaining_calib: remaining,
        })
    }

    fn withheld(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.cor_calib.iter().chain(&self.cor_test).copied().collect();
        w.sort_unstable();
        w
    }

    fn reshuffled(&self, seed: u64) -> Self {
        let mut w = self.withheld();
        w.shuffle(&mut rng::seeded(seed));
        let mut cor_test = w.split_off(self.cor_calib.len());
        let mut cor_calib = w;
        cor_calib.sort_unstable();
        cor_test.sort_unstable();
        Self {
            cor_calib,
            cor_test,
            remaining_calib: self.remaining_calib.clone(),
        }
    }
}

/// Quantile level `(1−α)(1 + 1/n)`, clamped to one.
pub fn inflated_level(alpha: f64, n: usize) -> f64 {
    ((1.0 - alpha) * (1.0 + 1.0 / n as f64)).min(1.0)
}

/// Smooth stand-in for the conformal quantile: linear interpolation between
/// the order statistics around `level·n`.
pub fn diff_quantile<T: Scalar>(tape: &mut Tape<T>, values: Var, level: f64) -> Result<Var> {
    tape.quantile(values, level)
}

/// APS scores of the true labels for `rows` of a probability matrix.
fn true_label_aps<T: Scalar>(tape: &mut Tape<T>, probs: Var, rows: &[usize], y: &[usize]) -> Result<Var> {
    let k = tape.value(probs).cols();
    let sel = tape.select_rows(probs, rows)?;
    let (sorted, perm) = tape.sort_rows(sel, true)?;
    let cum = tape.cumsum_rows(sorted)?;
    let index = rows
        .iter()
        .enumerate()
        .map(|(r, &v)| {
            let pos = perm[r * k..(r + 1) * k]
                .iter()
                .position(|&c| c == y[v])
                .ok_or_else(|| Error::invalid(format!("label {} outside {k} classes", y[v])))?;
            Ok(r * k + pos)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.gather(cum, index, vec![rows.len()])
}

/// Mean soft set size over cor-test, normalised by `K`:
/// `mean_i mean_k σ(±(η̂ − V(x_i, k))/τ)` with `η̂` the differentiable
/// quantile of true-label APS scores on cor-calib.
pub fn soft_set_size_loss<T: Scalar>(
    tape: &mut Tape<T>,
    mu_tilde: Var,
    labels: &Labels,
    split: &CorrectionSplit,
    alpha: f64,
    tau: f64,
    sign: MembershipSign,
) -> Result<Var> {
    let Labels::Classes { y, .. } = labels else {
        return Err(Error::invalid("soft_set_size_loss needs class labels"));
    };
    if split.cor_calib.is_empty() || split.cor_test.is_empty() {
        return Err(Error::invalid("correction sets must be non-empty"));
    }
    let cal = true_label_aps(tape, mu_tilde, &split.cor_calib, y)?;
    let eta = diff_quantile(tape, cal, inflated_level(alpha, split.cor_calib.len()))?;
    let test = tape.select_rows(mu_tilde, &split.cor_test)?;
    let (sorted, _) = tape.sort_rows(test, true)?;
    let v = tape.cumsum_rows(sorted)?;
    let neg = tape.scale(v, -T::one());
    let gap = tape.add_scalar(neg, eta)?;
    let s = match sign {
        MembershipSign::BelowThreshold => T::of(1.0 / tau),
        MembershipSign::AboveThreshold => T::of(-1.0 / tau),
    };
    let z = tape.scale(gap, s);
    let c = tape.sigmoid(z);
    tape.mean(c)
}

/// Mean CQR interval length over cor-test, `(μ̃_hi + η̂) − (μ̃_lo − η̂)`, plus
/// `reg_coeff` times the mean squared distance of `μ̃` from `μ̂` there.
pub fn interval_length_loss<T: Scalar>(
    tape: &mut Tape<T>,
    mu_tilde: Var,
    base: &Tensor<T>,
    labels: &Labels,
    split: &CorrectionSplit,
    alpha: f64,
    reg_coeff: f64,
) -> Result<Var> {
    let Labels::Targets(y) = labels else {
        return Err(Error::invalid("interval_length_loss needs regression targets"));
    };
    if split.cor_calib.is_empty() || split.cor_test.is_empty() {
        return Err(Error::invalid("correction sets must be non-empty"));
    }
    if tape.value(mu_tilde).shape() != base.shape() || base.cols() != 2 {
        return Err(Error::shape(
            "interval_length_loss",
            format!("{:?} vs base {:?}", tape.value(mu_tilde).shape(), base.shape()),
        ));
    }
    let cal = tape.select_rows(mu_tilde, &split.cor_calib)?;
    let lo = tape.column(cal, 0)?;
    let hi = tape.column(cal, 1)?;
    let yc: Vec<T> = split.cor_calib.iter().map(|&v| T::of(y[v])).collect();
    let yv = tape.constant(Tensor::matrix(yc.len(), 1, yc)?);
    let below = tape.sub(lo, yv)?;
    let above = tape.sub(yv, hi)?;
    let scores = tape.maximum(below, above)?;
    let eta = diff_quantile(tape, scores, inflated_level(alpha, split.cor_calib.len()))?;

    let test = tape.select_rows(mu_tilde, &split.cor_test)?;
    let lo_t = tape.column(test, 0)?;
    let hi_t = tape.column(test, 1)?;
    let width = tape.sub(hi_t, lo_t)?;
    let w1 = tape.add_scalar(width, eta)?;
    let w2 = tape.add_scalar(w1, eta)?;
    let length = tape.mean(w2)?;
    if reg_coeff == 0.0 {
        return Ok(length);
    }
    let reg = tape.squared_error(test, &base.select_rows(&split.cor_test))?;
    let reg = tape.scale(reg, T::of(reg_coeff));
    tape.add(length, reg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionModel<T> {
    gcn: GcnModel<T>,
    pub residual: bool,
    pub gamma: f64,
    pub tau: f64,
    pub reg_coeff: f64,
    pub split: CorrectionSplit,
}

impl<T: Scalar> CorrectionModel<T> {
    pub fn new(gcn: GcnModel<T>, cfg: &CorrectionConfig, split: CorrectionSplit) -> Self {
        Self {
            gcn,
            residual: cfg.residual,
            gamma: cfg.gamma,
            tau: cfg.tau,
            reg_coeff: cfg.reg_coeff,
            split,
        }
    }

    pub fn gcn(&self) -> &GcnModel<T> {
        &self.gcn
    }

    pub fn task(&self) -> Task {
        match self.gcn.head() {
            Head::Softmax { .. } => Task::Classification,
            Head::QuantilePair { .. } => Task::Regression,
        }
    }

    pub fn to_doc(&self) -> CorrectionDoc {
        CorrectionDoc {
            model: self.gcn.to_doc(),
            residual: self.residual,
            gamma: self.gamma,
            tau: self.tau,
            reg_coeff: self.reg_coeff,
            cor_calib: self.split.cor_calib.clone(),
            cor_test: self.split.cor_test.clone(),
        }
    }

    /// Rebuilds the model; `calib` is the calibration set it was trained
    /// against, from which the untouched remainder is recovered.
    pub fn from_doc(doc: &CorrectionDoc, calib: &[usize]) -> Result<Self> {
        let gcn = GcnModel::from_doc(&doc.model)?;
        let withheld: std::collections::HashSet<usize> = doc.cor_calib.iter().chain(&doc.cor_test).copied().collect();
        if withheld.len() != doc.cor_calib.len() + doc.cor_test.len() || !withheld.iter().all(|v| calib.contains(v)) {
            return Err(Error::invalid("correction sets are not disjoint subsets of the calibration set"));
        }
        let mut remaining: Vec<usize> = calib.iter().copied().filter(|v| !withheld.contains(v)).collect();
        remaining.sort_unstable();
        Ok(Self {
            gcn,
            residual: doc.residual,
            gamma: doc.gamma,
            tau: doc.tau,
            reg_coeff: doc.reg_coeff,
            split: CorrectionSplit {
                cor_calib: doc.cor_calib.clone(),
                cor_test: doc.cor_test.clone(),
                remaining_calib: remaining,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDoc {
    #[serde(flatten)]
    pub model: ModelDoc,
    #[serde(default)]
    pub residual: bool,
    pub gamma: f64,
    pub tau: f64,
    pub reg_coeff: f64,
    pub cor_calib: Vec<usize>,
    pub cor_test: Vec<usize>,
}

/// Floor inside the logarithm of base probabilities on the residual path.
const LOG_FLOOR: f64 = 1e-12;

#[allow(clippy::too_many_arguments)]
fn correct_on<T: Scalar>(
    gcn: &GcnModel<T>,
    residual: bool,
    tape: &mut Tape<T>,
    params: &[Var],
    adj: &Arc<CsrMatrix<T>>,
    base: &Tensor<T>,
    mode: Mode,
    r: Option<&mut rng::SplitRng>,
) -> Result<Var> {
    let x = tape.constant(base.clone());
    let mut out = gcn.forward_on(tape, params, adj, x, mode, r)?;
    match gcn.head() {
        Head::Softmax { .. } => {
            if residual {
                let shifted = tape.add_const(x, T::of(LOG_FLOOR));
                let logp = tape.log(shifted);
                out = tape.add(out, logp)?;
            }
            tape.softmax_rows(out)
        }
        Head::QuantilePair { .. } => {
            if residual {
                out = tape.add(out, x)?;
            }
            Ok(out)
        }
    }
}

/// Corrected scores `μ̃ = GNN_ϑ(μ̂, G)`, row-softmaxed for classification.
pub fn correct<T: Scalar>(model: &CorrectionModel<T>, adj: &Arc<CsrMatrix<T>>, base: &Tensor<T>) -> Result<Tensor<T>> {
    if base.cols() != model.gcn.input_dim() {
        return Err(Error::shape(
            "correct",
            format!("base scores have {} columns, model expects {}", base.cols(), model.gcn.input_dim()),
        ));
    }
    let mut tape = Tape::new();
    let params: Vec<Var> = model.gcn.params().into_iter().map(|p| tape.constant(p)).collect();
    let out = correct_on(&model.gcn, model.residual, &mut tape, &params, adj, base, Mode::Eval, None)?;
    Ok(tape.value(out).clone())
}

/// Builds the task loss for the current parameters.
pub fn correction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    mu_tilde: Var,
    base: &Tensor<T>,
    labels: &Labels,
    split: &CorrectionSplit,
    cfg: &CorrectionConfig,
) -> Result<Var> {
    match labels {
        Labels::Classes { .. } => soft_set_size_loss(tape, mu_tilde, labels, split, cfg.alpha, cfg.tau, cfg.sign),
        Labels::Targets(_) => interval_length_loss(tape, mu_tilde, base, labels, split, cfg.alpha, cfg.reg_coeff),
    }
}

const WARMUP_LR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_loss: f64,
    pub best_loss: f64,
    /// Loss after warm-up (index 0) and after every epoch, in evaluation mode.
    pub history: Vec<f64>,
}

fn eval_loss<T: Scalar>(
    gcn: &GcnModel<T>,
    params: &[Tensor<T>],
    adj: &Arc<CsrMatrix<T>>,
    base: &Tensor<T>,
    labels: &Labels,
    split: &CorrectionSplit,
    cfg: &CorrectionConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let mu = correct_on(gcn, cfg.residual, &mut tape, &vars, adj, base, Mode::Eval, None)?;
    let loss = correction_loss(&mut tape, mu, base, labels, split, cfg)?;
    Ok(tape.value(loss).item().as_f64())
}

/// Trains the correction GCN on withheld calibration nodes with Adam and
/// returns the lowest-loss parameters. `base_scores` is never modified.
pub fn train_correction<T: Scalar>(
    g: &Graph,
    base_scores: &Tensor<T>,
    data: &NodeData,
    calib: &[usize],
    cfg: &CorrectionConfig,
) -> Result<(CorrectionModel<T>, CorrectionReport)> {
    cfg.validate()?;
    let n = g.num_nodes();
    if base_scores.rows() != n || data.num_nodes() != n {
        return Err(Error::invalid("graph, node data and base scores disagree on the node count"));
    }
    let head = match data.labels() {
        Labels::Classes { num_classes, .. } => Head::Softmax { classes: *num_classes },
        Labels::Targets(_) => Head::QuantilePair { alpha: cfg.alpha },
    };
    if base_scores.cols() != head.width() {
        return Err(Error::shape(
            "train_correction",
            format!("base scores have {} columns, task needs {}", base_scores.cols(), head.width()),
        ));
    }
    let split = CorrectionSplit::draw(calib, cfg.gamma, cfg.seed)?;
    let adj = crate::graph::propagation::<T>(g);
    let mut dims = vec![head.width()];
    dims.extend(std::iter::repeat_n(cfg.hidden, cfg.layers - 1));
    dims.push(head.width());
    let mut gcn = GcnModel::<T>::new(&dims, head, cfg.dropout, rng::derive_seed(cfg.seed, 0xC1))?;
    if cfg.residual {
        let mut p = gcn.params();
        let last = p.len() - 2;
        p[last] = Tensor::zeros(p[last].shape());
        gcn.set_params(p)?;
    }
    let mut params = gcn.params();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &params,
    );
    if cfg.warmup_epochs > 0 {
        let mut warm = AdamState::new(
            AdamConfig {
                lr: cfg.lr.max(WARMUP_LR),
                ..Default::default()
            },
            &params,
        );
        for epoch in 1..=cfg.warmup_epochs {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
            let mu = correct_on(&gcn, cfg.residual, &mut tape, &vars, &adj, base_scores, Mode::Eval, None)?;
            let loss = tape.squared_error(mu, base_scores)?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get(v).unwrap().clone()).collect();
            warm.step(&mut params, &grads)?;
        }
    }
    let labels = data.labels();

    let initial_loss = eval_loss(&gcn, &params, &adj, base_scores, labels, &split, cfg)?;
    let mut best = (0usize, initial_loss, params.clone());
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(initial_loss);

    for epoch in 1..=cfg.epochs {
        let active = if cfg.resample {
            split.reshuffled(rng::derive_seed(cfg.seed, 0xC2 + epoch as u64))
        } else {
            split.clone()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let mut drop_rng = rng::derive(cfg.seed, 0x10_0000 + epoch as u64);
        let mu = correct_on(&gcn, cfg.residual, &mut tape, &vars, &adj, base_scores, Mode::Train, Some(&mut drop_rng))?;
        let loss = correction_loss(&mut tape, mu, base_scores, labels, &active, cfg)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, loss: value });
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get(v).unwrap().clone()).collect();
        adam.step(&mut params, &grads)?;

        let after = eval_loss(&gcn, &params, &adj, base_scores, labels, &split, cfg)?;
        if !after.is_finite() {
            return Err(Error::Divergence { epoch, loss: after });
        }
        history.push(after);
        if after < best.1 {
            best = (epoch, after, params.clone());
        }
    }
    let (best_epoch, best_loss, best_params) = best;
    gcn.set_params(best_params)?;
    let model = CorrectionModel::new(gcn, cfg, split);
    Ok((
        model,
        CorrectionReport {
            epochs_run: cfg.epochs,
            best_epoch,
            initial_loss,
            best_loss,
            history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        let calib: Vec<usize> = (0..1000).collect();
        let s = CorrectionSplit::draw(&calib, 0.5, 3).unwrap();
        assert_eq!((s.cor_calib.len(), s.cor_test.len(), s.remaining_calib.len()), (250, 250, 500));
        let mut all: Vec<usize> = s.cor_calib.iter().chain(&s.cor_test).chain(&s.remaining_calib).copied().collect();
        all.sort_unstable();
        assert_eq!(all, calib);
        assert_eq!(s, CorrectionSplit::draw(&calib, 0.5, 3).unwrap());
    }

    #[test]
    fn insufficient_calibration_reports_minimum() {
        let err = CorrectionSplit::draw(&[1, 2, 3, 4, 5], 0.5, 0).unwrap_err();
        match err {
            Error::InsufficientCalibration { required, available } => {
                assert_eq!(available, 5);
                assert_eq!(required, 8);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(CorrectionSplit::draw(&[1, 2, 3], 1.0, 0).is_err());
    }

    #[test]
    fn diff_quantile_examples() {
        let mut tape = Tape::<f64>::new();
        let v = tape.param(Tensor::new(vec![4], vec![3.0, 0.0, 2.0, 1.0]).unwrap());
        let q = diff_quantile(&mut tape, v, 0.625).unwrap();
        assert_eq!(tape.value(q).item(), 1.5);
        let top = diff_quantile(&mut tape, v, 1.0).unwrap();
        assert_eq!(tape.value(top).item(), 3.0);
    }

    #[test]
    fn inflated_level_clamps() {
        assert_eq!(inflated_level(0.05, 3), 1.0);
        assert!((inflated_level(0.1, 9) - 1.0).abs() < 1e-12);
        assert!((inflated_level(0.1, 99) - 0.909090909).abs() < 1e-8);
    }

    fn split_of(cal: &[usize], test: &[usize]) -> CorrectionSplit {
        CorrectionSplit {
            cor_calib: cal.to_vec(),
            cor_test: test.to_vec(),
            remaining_calib: vec![],
        }
    }

    #[test]
    fn soft_membership_at_threshold_is_half() {
        // Single calibration row: η̂ equals its true-label score, 0.25; the
        // test row is uniform, its first cumulative sum is 0.25 as well.
        let mut tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::matrix(2, 4, vec![0.25; 8]).unwrap());
        let labels = Labels::Classes {
            num_classes: 4,
            y: vec![0, 0],
        };
        let loss = soft_set_size_loss(&mut tape, mu, &labels, &split_of(&[0], &[1]), 0.5, 1e-9, MembershipSign::BelowThreshold)
            .unwrap();
        // Cumulative sums 0.25, 0.5, 0.75, 1.0 against η̂ = 0.25.
        assert!((tape.value(loss).item() - (0.5 + 0.0 + 0.0 + 0.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn sharp_temperature_counts_the_hard_set() {
        let mut tape = Tape::<f64>::new();
        // Calibration row gives η̂ = 0.7; the test row's cumulative sums are
        // 0.4, 0.65, 0.85, 1.0, so two of four classes fall below.
        let mu = tape.constant(Tensor::matrix(2, 4, vec![0.7, 0.1, 0.1, 0.1, 0.4, 0.25, 0.2, 0.15]).unwrap());
        let labels = Labels::Classes {
            num_classes: 4,
            y: vec![0, 0],
        };
        let loss = soft_set_size_loss(&mut tape, mu, &labels, &split_of(&[0], &[1]), 0.5, 1e-6, MembershipSign::BelowThreshold)
            .unwrap();
        assert!((tape.value(loss).item() - 0.5).abs() < 1e-9);
        let flipped = soft_set_size_loss(&mut tape, mu, &labels, &split_of(&[0], &[1]), 0.5, 1e-6, MembershipSign::AboveThreshold)
            .unwrap();
        assert!((tape.value(flipped).item() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn interval_loss_examples() {
        let labels = Labels::Targets(vec![2.5, 0.0]);
        // Calibration node 0 has score max(1 − 2.5, 2.5 − 2) = 0.5, so η̂ = 0.5.
        let base = Tensor::matrix(2, 2, vec![1.0, 2.0, 1.0, 3.0]).unwrap();
        let split = split_of(&[0], &[1]);
        let mut tape = Tape::<f64>::new();
        let mu = tape.constant(base.clone());
        let loss = interval_length_loss(&mut tape, mu, &base, &labels, &split, 0.5, 0.0).unwrap();
        assert!((tape.value(loss).item() - 3.0).abs() < 1e-15);
        let loss = interval_length_loss(&mut tape, mu, &base, &labels, &split, 0.5, 1.0).unwrap();
        assert!((tape.value(loss).item() - 3.0).abs() < 1e-15);

        let shifted = Tensor::matrix(2, 2, vec![2.0, 3.0, 2.0, 4.0]).unwrap();
        let mu = tape.constant(shifted);
        let plain = interval_length_loss(&mut tape, mu, &base, &labels, &split, 0.5, 0.0).unwrap();
        let reg = interval_length_loss(&mut tape, mu, &base, &labels, &split, 0.5, 1.0).unwrap();
        assert!((tape.value(reg).item() - tape.value(plain).item() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_model_gives_uniform_rows() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let adj = crate::graph::propagation::<f64>(&g);
        let head = Head::Softmax { classes: 3 };
        let gcn = GcnModel::from_parts(
            vec![3, 4, 3],
            vec![Tensor::zeros(&[3, 4]), Tensor::zeros(&[4, 3])],
            vec![Tensor::zeros(&[1, 4]), Tensor::zeros(&[1, 3])],
            head,
            0.0,
        )
        .unwrap();
        let model = CorrectionModel::new(gcn, &CorrectionConfig::default(), split_of(&[], &[]));
        let base = Tensor::matrix(3, 3, vec![0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4]).unwrap();
        let out = correct(&model, &adj, &base).unwrap();
        assert!(out.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!(correct(&model, &adj, &Tensor::zeros(&[3, 2])).is_err());
    }
}
