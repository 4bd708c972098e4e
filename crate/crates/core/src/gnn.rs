//! Graph convolutional network: `H⁽ˡ⁾ = relu(Â·H⁽ˡ⁻¹⁾·W⁽ˡ⁾ + b⁽ˡ⁾)` with a
//! linear final layer, plus the full-batch training loops for the softmax
//! classifier and the two-column quantile regressor.
//!
//! A node's output depends on the graph only through `Â` and the feature
//! rows; nothing reads node indices or split membership.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{DataSplit, Graph, Labels, NodeData};
use crate::rng::{self, SplitRng};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Logits over `classes`; scores are their row softmax.
    Softmax { classes: usize },
    /// Columns estimate the `α/2` and `1−α/2` conditional quantiles.
    QuantilePair { alpha: f64 },
}

impl Head {
    pub fn width(&self) -> usize {
        match *self {
            Head::Softmax { classes } => classes,
            Head::QuantilePair { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel<T> {
    dims: Vec<usize>,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
    dropout: f64,
    head: Head,
}

impl<T: Scalar> GcnModel<T> {
    /// Xavier-uniform weights and zero biases for the layer widths `dims`
    /// (input first, output last).
    pub fn new(dims: &[usize], head: Head, dropout: f64, seed: u64) -> Result<Self> {
        Self::check_dims(dims, head)?;
        let mut rng = rng::seeded(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::of(rng.random_range(-a..a)))
                .collect();
            weights.push(Tensor::matrix(fan_in, fan_out, data)?);
            biases.push(Tensor::zeros(&[1, fan_out]));
        }
        Self::from_parts(dims.to_vec(), weights, biases, head, dropout)
    }

    pub fn from_parts(
        dims: Vec<usize>,
        weights: Vec<Tensor<T>>,
        biases: Vec<Tensor<T>>,
        head: Head,
        dropout: f64,
    ) -> Result<Self> {
        Self::check_dims(&dims, head)?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout {dropout} outside [0, 1)")));
        }
        let layers = dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::invalid("one weight and one bias per layer required"));
        }
        for (l, w) in dims.windows(2).enumerate() {
            if weights[l].shape() != [w[0], w[1]] || biases[l].len() != w[1] {
                return Err(Error::shape(
                    "gcn layer",
                    format!("layer {l}: W {:?}, b {:?}, expected [{}, {}]", weights[l].shape(), biases[l].shape(), w[0], w[1]),
                ));
            }
        }
        let biases = biases
            .into_iter()
            .map(|b| {
                let n = b.len();
                Tensor::matrix(1, n, b.into_data())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dims,
            weights,
            biases,
            dropout,
            head,
        })
    }

    fn check_dims(dims: &[usize], head: Head) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {dims:?}")));
        }
        if *dims.last().unwrap() != head.width() {
            return Err(Error::invalid(format!(
                "output width {} does not match head {head:?}",
                dims.last().unwrap()
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor<T>] {
        &self.biases
    }

    /// Parameters in the order `W₁, b₁, W₂, b₂, …`.
    pub fn params(&self) -> Vec<Tensor<T>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    pub fn set_params(&mut self, params: Vec<Tensor<T>>) -> Result<()> {
        if params.len() != 2 * self.num_layers() {
            return Err(Error::invalid("parameter count does not match the layers"));
        }
        let mut it = params.into_iter();
        for l in 0..self.num_layers() {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != self.weights[l].shape() || b.shape() != self.biases[l].shape() {
                return Err(Error::shape("set_params", format!("layer {l}")));
            }
            self.weights[l] = w;
            self.biases[l] = b;
        }
        Ok(())
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p)).collect()
    }

    /// Forward pass over bound parameters. Dropout precedes every layer in
    /// training mode and needs `rng`; evaluation mode ignores it.
    pub fn forward_on(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        adj: &Arc<CsrMatrix<T>>,
        x: Var,
        mode: Mode,
        mut rng: Option<&mut SplitRng>,
    ) -> Result<Var> {
        let rows = tape.value(x).rows();
        let cols = tape.value(x).cols();
        if rows != adj.rows() || cols != self.input_dim() {
            return Err(Error::shape(
                "gcn_forward",
                format!(
                    "features [{rows}, {cols}] vs adjacency {} nodes and input width {}",
                    adj.rows(),
                    self.input_dim()
                ),
            ));
        }
        let mut h = x;
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            if mode == Mode::Train && self.dropout > 0.0 {
                let r = rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::invalid("training mode needs a dropout generator"))?;
                h = tape.dropout(h, self.dropout, r)?;
            }
            let hw = tape.matmul(h, params[2 * l])?;
            let agg = tape.spmm(adj, hw)?;
            h = tape.add_row_bias(agg, params[2 * l + 1])?;
            if l < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Raw outputs (logits or quantile pair) in evaluation mode.
    pub fn forward(&self, adj: &Arc<CsrMatrix<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params().into_iter().map(|p| tape.constant(p)).collect();
        let xv = tape.constant(x.clone());
        let out = self.forward_on(&mut tape, &params, adj, xv, Mode::Eval, None)?;
        Ok(tape.value(out).clone())
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            dims: self.dims.clone(),
            head: self.head,
            dropout: self.dropout,
            weights: self.weights.iter().map(Tensor::to_f64).collect(),
            biases: self.biases.iter().map(Tensor::to_f64).collect(),
        }
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self> {
        if doc.dims.len() < 2 || doc.weights.len() + 1 != doc.dims.len() || doc.biases.len() + 1 != doc.dims.len() {
            return Err(Error::invalid("model document layer count mismatch"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in doc.dims.windows(2).enumerate() {
            weights.push(Tensor::from_f64(w[0], w[1], &doc.weights[l])?);
            biases.push(Tensor::from_f64(1, w[1], &doc.biases[l])?);
        }
        Self::from_parts(doc.dims.clone(), weights, biases, doc.head, doc.dropout)
    }
}

/// Serialized form: layer widths, head, and flattened row-major parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub dims: Vec<usize>,
    pub head: Head,
    pub dropout: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Forward pass with explicit mode; `seed` drives dropout in training mode.
pub fn gcn_forward<T: Scalar>(
    model: &GcnModel<T>,
    adj: &Arc<CsrMatrix<T>>,
    x: &Tensor<T>,
    mode: Mode,
    seed: u64,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params().into_iter().map(|p| tape.constant(p)).collect();
    let xv = tape.constant(x.clone());
    let mut r = rng::seeded(seed);
    let out = model.forward_on(&mut tape, &params, adj, xv, mode, Some(&mut r))?;
    Ok(tape.value(out).clone())
}

/// Frozen prediction scores: class probabilities for a softmax head, the raw
/// quantile pair otherwise. Always evaluation mode.
pub fn predict_scores<T: Scalar>(
    model: &GcnModel<T>,
    adj: &Arc<CsrMatrix<T>>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let out = model.forward(adj, x)?;
    match model.head() {
        Head::Softmax { classes } => {
            let probs = crate::autodiff::softmax_rows_raw(out.data(), classes);
            Tensor::matrix(out.rows(), classes, probs)
        }
        Head::QuantilePair { .. } => Ok(out),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Target miscoverage; sets the quantile levels of the regression head.
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            lr: 0.01,
            epochs: 200,
            weight_decay: 5e-4,
            dropout: 0.5,
            patience: 50,
            seed: 0,
            alpha: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("layers and hidden must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::invalid("lr must be positive and weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1)"));
        }
        Ok(())
    }

    pub(crate) fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden, self.layers - 1));
        dims.push(output);
        dims
    }

    pub(crate) fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

/// Losses observed while training, all in evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 0 means the initial parameters were never beaten.
    pub best_epoch: usize,
    pub initial_train_loss: f64,
    pub best_train_loss: f64,
    pub best_valid_loss: f64,
}

pub(crate) enum Objective<T> {
    CrossEntropy(Vec<usize>),
    Pinball { targets: Vec<T>, betas: Vec<T> },
}

impl<T: Scalar> Objective<T> {
    pub(crate) fn loss(&self, tape: &mut Tape<T>, out: Var, rows: &[usize]) -> Result<Var> {
        match self {
            Objective::CrossEntropy(labels) => {
                let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
                tape.cross_entropy(out, rows, &y)
            }
            Objective::Pinball { targets, betas } => {
                let y: Vec<T> = rows.iter().map(|&r| targets[r]).collect();
                tape.pinball(out, rows, &y, betas)
            }
        }
    }
}

/// Node features as an `N × d` tensor.
pub fn features_tensor<T: Scalar>(data: &NodeData) -> Result<Tensor<T>> {
    Tensor::from_f64(data.num_nodes(), data.num_features(), data.features())
}

fn eval_loss<T: Scalar>(
    model: &GcnModel<T>,
    adj: &Arc<CsrMatrix<T>>,
    x: &Tensor<T>,
    objective: &Objective<T>,
    rows: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params().into_iter().map(|p| tape.constant(p)).collect();
    let xv = tape.constant(x.clone());
    let out = model.forward_on(&mut tape, &params, adj, xv, Mode::Eval, None)?;
    let loss = objective.loss(&mut tape, out, rows)?;
    Ok(tape.value(loss).item().as_f64())
}

fn fit<T: Scalar>(
    g: &Graph,
    data: &NodeData,
    split: &DataSplit,
    cfg: &TrainConfig,
    head: Head,
    objective: Objective<T>,
) -> Result<(GcnModel<T>, TrainReport)> {
    cfg.validate()?;
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(Error::invalid("training needs non-empty train and valid sets"));
    }
    if g.num_nodes() != data.num_nodes() {
        return Err(Error::invalid("graph and node data disagree on the node count"));
    }
    let adj = crate::graph::propagation::<T>(g);
    let x = features_tensor::<T>(data)?;
    let dims = cfg.dims(data.num_features(), head.width());
    let mut model = GcnModel::new(&dims, head, cfg.dropout, cfg.seed)?;
    let mut params = model.params();
    let mut adam = AdamState::new(cfg.adam(), &params);

    let initial_train_loss = eval_loss(&model, &adj, &x, &objective, &split.train)?;
    let mut best_valid = eval_loss(&model, &adj, &x, &objective, &split.valid)?;
    let mut best = (0, params.clone(), initial_train_loss);
    let mut since = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let mut drop_rng = rng::derive(cfg.seed, epoch as u64);
        let out = model.forward_on(&mut tape, &vars, &adj, xv, Mode::Train, Some(&mut drop_rng))?;
        let loss = objective.loss(&mut tape, out, &split.train)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, loss: value });
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get(v).unwrap().clone()).collect();
        adam.step(&mut params, &grads)?;
        model.set_params(params.clone())?;

        let valid = eval_loss(&model, &adj, &x, &objective, &split.valid)?;
        if !valid.is_finite() {
            return Err(Error::Divergence { epoch, loss: valid });
        }
        if valid < best_valid {
            best_valid = valid;
            let train = eval_loss(&model, &adj, &x, &objective, &split.train)?;
            best = (epoch, params.clone(), train);
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_params, best_train_loss) = best;
    model.set_params(best_params)?;
    Ok((
        model,
        TrainReport {
            epochs_run,
            best_epoch,
            initial_train_loss,
            best_train_loss,
            best_valid_loss: best_valid,
        },
    ))
}

/// Cross-entropy training on the train nodes with early stopping on the
/// validation loss. Labels outside train ∪ valid are never read.
pub fn train_classifier<T: Scalar>(
    g: &Graph,
    data: &NodeData,
    split: &DataSplit,
    cfg: &TrainConfig,
) -> Result<(GcnModel<T>, TrainReport)> {
    let Labels::Classes { num_classes, y } = data.labels() else {
        return Err(Error::invalid("train_classifier needs a classification dataset"));
    };
    fit(
        g,
        data,
        split,
        cfg,
        Head::Softmax {
            classes: *num_classes,
        },
        Objective::CrossEntropy(y.clone()),
    )
}

/// Pinball-loss training of the `α/2` and `1−α/2` quantile heads.
pub fn train_quantile_regressor<T: Scalar>(
    g: &Graph,
    data: &NodeData,
    split: &DataSplit,
    cfg: &TrainConfig,
) -> Result<(GcnModel<T>, TrainReport)> {
    let Labels::Targets(y) = data.labels() else {
        return Err(Error::invalid("train_quantile_regressor needs a regression dataset"));
    };
    cfg.validate()?;
    let a = cfg.alpha;
    fit(
        g,
        data,
        split,
        cfg,
        Head::QuantilePair { alpha: a },
        Objective::Pinball {
            targets: y.iter().map(|&v| T::of(v)).collect(),
            betas: vec![T::of(a / 2.0), T::of(1.0 - a / 2.0)],
        },
    )
}

/// Dispatches on the dataset's task.
pub fn train_base<T: Scalar>(
    g: &Graph,
    data: &NodeData,
    split: &DataSplit,
    cfg: &TrainConfig,
) -> Result<(GcnModel<T>, TrainReport)> {
    match data.task() {
        crate::graph::Task::Classification => train_classifier(g, data, split, cfg),
        crate::graph::Task::Regression => train_quantile_regressor(g, data, split, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_adjacency, propagation};

    fn identity_model() -> GcnModel<f64> {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[1, 2]);
        GcnModel::from_parts(vec![2, 2], vec![w], vec![b], Head::QuantilePair { alpha: 0.1 }, 0.0).unwrap()
    }

    #[test]
    fn isolated_node_identity_layer_returns_features() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let adj = propagation::<f64>(&g);
        let x = Tensor::matrix(1, 2, vec![0.7, -1.3]).unwrap();
        let out = gcn_forward(&identity_model(), &adj, &x, Mode::Eval, 0).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn symmetric_nodes_get_identical_outputs() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let adj = propagation::<f64>(&g);
        let model = GcnModel::<f64>::new(&[3, 8, 4], Head::Softmax { classes: 4 }, 0.0, 1).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.2, 0.5, -1.0, 0.2, 0.5, -1.0]).unwrap();
        let p = predict_scores(&model, &adj, &x).unwrap();
        assert_eq!(p.row(0), p.row(1));
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_logits_give_uniform_probabilities() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let adj = propagation::<f64>(&g);
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[1, 3]);
        let model = GcnModel::from_parts(vec![2, 3], vec![w], vec![b], Head::Softmax { classes: 3 }, 0.0).unwrap();
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = predict_scores(&model, &adj, &x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let adj = Arc::new(normalized_adjacency::<f64>(&g));
        let x = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert!(identity_model().forward(&adj, &x).is_err());
        assert!(GcnModel::<f64>::new(&[3, 5], Head::Softmax { classes: 4 }, 0.0, 0).is_err());
    }

    #[test]
    fn dropout_only_in_training_mode() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let adj = propagation::<f64>(&g);
        let model = GcnModel::<f64>::new(&[3, 16, 2], Head::Softmax { classes: 2 }, 0.5, 4).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let e1 = gcn_forward(&model, &adj, &x, Mode::Eval, 1).unwrap();
        let e2 = gcn_forward(&model, &adj, &x, Mode::Eval, 2).unwrap();
        assert_eq!(e1, e2);
        let t1 = gcn_forward(&model, &adj, &x, Mode::Train, 1).unwrap();
        let t2 = gcn_forward(&model, &adj, &x, Mode::Train, 1).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, e1);
    }

    #[test]
    fn doc_round_trip_is_exact() {
        let model = GcnModel::<f64>::new(&[5, 7, 3], Head::Softmax { classes: 3 }, 0.3, 9).unwrap();
        let json = serde_json::to_string(&model.to_doc()).unwrap();
        let back: ModelDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(GcnModel::<f64>::from_doc(&back).unwrap(), model);
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
