//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! Nodes are appended in evaluation order, so the record is already
//! topologically sorted and [`Tape::backward`] is a single reverse sweep.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{sum_f64, Scalar};
use crate::sparse::CsrMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    SpMatMul(Arc<CsrMatrix<T>>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Maximum(Var, Var),
    AddRowBias(Var, Var),
    AddScalar(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
    CumsumRows(Var),
    Interp(Var, Vec<(usize, T)>),
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Pinball {
        pred: Var,
        rows: Vec<usize>,
        targets: Vec<T>,
        betas: Vec<T>,
    },
    SquaredError(Var, Vec<T>),
    Dropout(Var, Vec<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    trainable: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn desc<T: Scalar>(t: &Tensor<T>) -> String {
    format!("{:?}", t.shape())
}

/// Ascending order of `values`, ties broken by position.
pub(crate) fn ascending_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Order statistics and weights of the linearly interpolated quantile:
/// position `p = level·n` (1-based); the minimum when `p ≤ 1`, the maximum
/// when `p ≥ n`, otherwise `(1−λ)·v₍f₎ + λ·v₍f+1₎` with `f = ⌊p⌋`, `λ = p − f`.
pub(crate) fn quantile_picks<T: Scalar>(values: &[T], level: f64) -> Vec<(usize, T)> {
    let order = ascending_order(values);
    let n = values.len();
    let p = level * n as f64;
    if p <= 1.0 {
        return vec![(order[0], T::one())];
    }
    if p >= n as f64 {
        return vec![(order[n - 1], T::one())];
    }
    let f = p.floor();
    let lambda = p - f;
    let f = f as usize;
    if lambda == 0.0 {
        vec![(order[f - 1], T::one())]
    } else {
        vec![(order[f - 1], T::of(1.0 - lambda)), (order[f], T::of(lambda))]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].trainable = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.val(v);
        if !t.is_matrix() {
            return Err(Error::shape(op, format!("expected a matrix, got {}", desc(t))));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{} x {}", desc(self.val(a)), desc(self.val(b))),
            ));
        }
        let out = matmul_raw(self.val(a).data(), self.val(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// Sparse (constant) times dense.
    pub fn spmm(&mut self, s: &Arc<CsrMatrix<T>>, x: Var) -> Result<Var> {
        let (r, k) = self.matrix("spmm", x)?;
        if s.cols() != r {
            return Err(Error::shape(
                "spmm",
                format!("[{}, {}] x {}", s.rows(), s.cols(), desc(self.val(x))),
            ));
        }
        let out = s.matmul_dense(self.val(x).data(), k);
        Ok(self.push(Tensor::matrix(s.rows(), k, out)?, Op::SpMatMul(Arc::clone(s), x)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::shape(
                op,
                format!("{} vs {}", desc(self.val(a)), desc(self.val(b))),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Var {
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// Elementwise maximum; on ties the gradient goes to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        Ok(self.zip_with(Op::Maximum(a, b), a, b, |x, y| if x >= y { x } else { y }))
    }

    /// Adds a length-`c` bias to every row of an `r × c` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.matrix("add_row_bias", a)?;
        if self.val(bias).len() != c {
            return Err(Error::shape(
                "add_row_bias",
                format!("{} + {}", desc(self.val(a)), desc(self.val(bias))),
            ));
        }
        let b = self.val(bias).data();
        let mut out = self.val(a).data().to_vec();
        for row in out.chunks_mut(c) {
            for (x, &bj) in row.iter_mut().zip(b) {
                *x += bj;
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRowBias(a, bias)))
    }

    /// Adds a one-element tensor to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.val(s).len() != 1 {
            return Err(Error::shape("add_scalar", format!("{} is not a scalar", desc(self.val(s)))));
        }
        let c = self.val(s).item();
        let value = self.val(a).map(|x| x + c);
        Ok(self.push(value, Op::AddScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.val(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let value = self.val(a).map(|x| x + c);
        self.push(value, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(value, Op::Relu(a))
    }

    /// `σ(x) = 1/(1+e^{−x})`, evaluated without overflow for large `|x|`.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Max-subtracted softmax of each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix("softmax_rows", a)?;
        let out = softmax_rows_raw(self.val(a).data(), c);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::SoftmaxRows(a)))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.val(a).map(|x| x.ln());
        self.push(value, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = sum_f64(self.val(a).data().iter().copied());
        self.push(Tensor::scalar(T::of(s)), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = sum_f64(t.data().iter().copied()) / t.len() as f64;
        Ok(self.push(Tensor::scalar(T::of(m)), Op::Mean(a)))
    }

    /// `out[i] = src.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let s = self.val(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= s.len()) {
            return Err(Error::shape("gather", format!("index {bad} outside {}", desc(s))));
        }
        let data = index.iter().map(|&i| s.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Gather(src, index)))
    }

    pub fn select_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix("select_rows", src)?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("select_rows", format!("row {bad} outside {r} rows")));
        }
        let index = rows.iter().flat_map(|&i| (i * c)..(i + 1) * c).collect();
        self.gather(src, index, vec![rows.len(), c])
    }

    /// Column `col` of an `r × c` matrix as an `r × 1` matrix.
    pub fn column(&mut self, src: Var, col: usize) -> Result<Var> {
        let (r, c) = self.matrix("column", src)?;
        if col >= c {
            return Err(Error::shape("column", format!("column {col} outside {c} columns")));
        }
        self.gather(src, (0..r).map(|i| i * c + col).collect(), vec![r, 1])
    }

    /// Sorts each row, recording the permutation as a constant gather.
    ///
    /// Returns the sorted matrix and, for every row, the source column of
    /// each sorted position. Ties are broken by ascending column index.
    pub fn sort_rows(&mut self, src: Var, descending: bool) -> Result<(Var, Vec<usize>)> {
        let (r, c) = self.matrix("sort_rows", src)?;
        let data = self.val(src).data();
        let mut perm = Vec::with_capacity(r * c);
        for row in data.chunks(c) {
            let mut idx: Vec<usize> = (0..c).collect();
            idx.sort_by(|&a, &b| {
                let ord = row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal);
                let ord = if descending { ord.reverse() } else { ord };
                ord.then(a.cmp(&b))
            });
            perm.extend(idx);
        }
        let index = perm
            .iter()
            .enumerate()
            .map(|(k, &col)| (k / c) * c + col)
            .collect();
        let sorted = self.gather(src, index, vec![r, c])?;
        Ok((sorted, perm))
    }

    /// Running sum along each row.
    pub fn cumsum_rows(&mut self, src: Var) -> Result<Var> {
        let (r, c) = self.matrix("cumsum_rows", src)?;
        let mut out = self.val(src).data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 1..c {
                let prev = row[j - 1];
                row[j] += prev;
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::CumsumRows(src)))
    }

    /// Linearly interpolated quantile over all entries of `src`. The sort
    /// order is frozen, so the gradient reaches only the one or two order
    /// statistics that participate.
    pub fn quantile(&mut self, src: Var, level: f64) -> Result<Var> {
        let s = self.val(src);
        if s.is_empty() {
            return Err(Error::shape("quantile", "empty tensor"));
        }
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::invalid(format!("quantile level {level} outside (0, 1]")));
        }
        let picks = quantile_picks(s.data(), level);
        let q = picks.iter().fold(T::zero(), |acc, &(i, w)| acc + w * s.data()[i]);
        Ok(self.push(Tensor::scalar(q), Op::Interp(src, picks)))
    }

    /// Mean cross-entropy of the softmax of `logits` over the listed rows.
    pub fn cross_entropy(&mut self, logits: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix("cross_entropy", logits)?;
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} rows vs {} labels", rows.len(), labels.len()),
            ));
        }
        if rows.iter().any(|&i| i >= r) || labels.iter().any(|&y| y >= c) {
            return Err(Error::shape("cross_entropy", "row or label index out of range"));
        }
        let sel = self.val(logits).select_rows(rows);
        let probs = softmax_rows_raw(sel.data(), c);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = sel.row(i);
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b)).as_f64();
            let lse = m + row.iter().map(|&z| (z.as_f64() - m).exp()).sum::<f64>().ln();
            loss += lse - row[y].as_f64();
        }
        loss /= rows.len() as f64;
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::CrossEntropy {
                logits,
                rows: rows.to_vec(),
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `Σ_c mean_i ρ_{β_c}(y_i − pred[row_i, c])` with the pinball loss
    /// `ρ_β(u) = max(β·u, (β−1)·u)`.
    pub fn pinball(&mut self, pred: Var, rows: &[usize], targets: &[T], betas: &[T]) -> Result<Var> {
        let (r, c) = self.matrix("pinball", pred)?;
        if rows.len() != targets.len() || rows.is_empty() || betas.len() != c {
            return Err(Error::shape(
                "pinball",
                format!("{} rows, {} targets, {} levels for {c} columns", rows.len(), targets.len(), betas.len()),
            ));
        }
        if rows.iter().any(|&i| i >= r) {
            return Err(Error::shape("pinball", "row index out of range"));
        }
        let p = self.val(pred);
        let mut loss = 0.0;
        for (&i, &y) in rows.iter().zip(targets) {
            for (j, &beta) in betas.iter().enumerate() {
                loss += pinball(beta, y - p.get(i, j)).as_f64();
            }
        }
        loss /= rows.len() as f64;
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::Pinball {
                pred,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
                betas: betas.to_vec(),
            },
        ))
    }

    /// Mean over rows of the row-wise squared distance to a constant target.
    pub fn squared_error(&mut self, a: Var, target: &Tensor<T>) -> Result<Var> {
        let t = self.val(a);
        if t.shape() != target.shape() || t.is_empty() {
            return Err(Error::shape(
                "squared_error",
                format!("{} vs {}", desc(t), desc(target)),
            ));
        }
        let rows = t.rows() as f64;
        let s = sum_f64(t.data().iter().zip(target.data()).map(|(&x, &y)| (x - y) * (x - y)));
        Ok(self.push(
            Tensor::scalar(T::of(s / rows)),
            Op::SquaredError(a, target.data().to_vec()),
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and
    /// rescales survivors by `1/(1−rate)`. A zero rate records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.val(a).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let t = self.val(a);
        let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout(a, mask)))
    }

    /// Gradients of the scalar `output` with respect to every trainable leaf.
    /// The tape is left untouched, so repeated calls agree exactly.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.val(output);
        if out.len() != 1 {
            return Err(Error::shape("backward", format!("output {} is not a scalar", desc(out))));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![T::one()]);

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| {
                if !node.trainable {
                    return None;
                }
                let data = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                Some(Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, delta: &dyn Fn(usize) -> T| {
            let len = self.val(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            for (i, s) in slot.iter_mut().enumerate() {
                *s += delta(i);
            }
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G·Bᵀ, dB = Aᵀ·G
                let da = matmul_bt(g, tb.data(), m, n, k);
                let db = matmul_at(ta.data(), g, m, k, n);
                acc(*a, &|i| da[i]);
                acc(*b, &|i| db[i]);
            }
            Op::SpMatMul(s, x) => {
                let k = self.val(*x).cols();
                let dx = s.transpose_matmul_dense(g, k);
                acc(*x, &|i| dx[i]);
            }
            Op::Add(a, b) => {
                acc(*a, &|i| g[i]);
                acc(*b, &|i| g[i]);
            }
            Op::Sub(a, b) => {
                acc(*a, &|i| g[i]);
                acc(*b, &|i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, &|i| g[i] * db[i]);
                acc(*b, &|i| g[i] * da[i]);
            }
            Op::Maximum(a, b) => {
                let (da, db) = (self.val(*a).data(), self.val(*b).data());
                acc(*a, &|i| if da[i] >= db[i] { g[i] } else { T::zero() });
                acc(*b, &|i| if da[i] >= db[i] { T::zero() } else { g[i] });
            }
            Op::AddRowBias(a, b) => {
                acc(*a, &|i| g[i]);
                let c = self.val(*b).len();
                let mut db = vec![T::zero(); c];
                for row in g.chunks(c) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                acc(*b, &|i| db[i]);
            }
            Op::AddScalar(a, s) => {
                acc(*a, &|i| g[i]);
                let total = T::of(sum_f64(g.iter().copied()));
                acc(*s, &|_| total);
            }
            Op::Scale(a, c) => acc(*a, &|i| g[i] * *c),
            Op::AddConst(a) => acc(*a, &|i| g[i]),
            Op::Relu(a) => acc(*a, &|i| if y[i] > T::zero() { g[i] } else { T::zero() }),
            Op::Sigmoid(a) => acc(*a, &|i| g[i] * y[i] * (T::one() - y[i])),
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                let mut dx = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot = T::of(sum_f64(yr.iter().zip(gr).map(|(&p, &q)| p * q)));
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, &|i| dx[i]);
            }
            Op::Log(a) => {
                let x = self.val(*a).data();
                acc(*a, &|i| g[i] / x[i]);
            }
            Op::Sum(a) => acc(*a, &|_| g[0]),
            Op::Mean(a) => {
                let n = T::of_usize(self.val(*a).len());
                acc(*a, &|_| g[0] / n);
            }
            Op::Gather(src, index) => {
                let len = self.val(*src).len();
                let mut d = vec![T::zero(); len];
                for (k, &i) in index.iter().enumerate() {
                    d[i] += g[k];
                }
                acc(*src, &|i| d[i]);
            }
            Op::CumsumRows(src) => {
                let c = node.value.cols();
                let mut d = g.to_vec();
                for row in d.chunks_mut(c) {
                    for j in (0..c.saturating_sub(1)).rev() {
                        let next = row[j + 1];
                        row[j] += next;
                    }
                }
                acc(*src, &|i| d[i]);
            }
            Op::Interp(src, picks) => {
                let len = self.val(*src).len();
                let mut d = vec![T::zero(); len];
                for &(i, w) in picks {
                    d[i] += w * g[0];
                }
                acc(*src, &|i| d[i]);
            }
            Op::CrossEntropy {
                logits,
                rows,
                labels,
                probs,
            } => {
                let t = self.val(*logits);
                let c = t.cols();
                let scale = g[0] / T::of_usize(rows.len());
                let mut d = vec![T::zero(); t.len()];
                for (k, (&r, &lab)) in rows.iter().zip(labels).enumerate() {
                    for j in 0..c {
                        let onehot = if j == lab { T::one() } else { T::zero() };
                        d[r * c + j] += (probs[k * c + j] - onehot) * scale;
                    }
                }
                acc(*logits, &|i| d[i]);
            }
            Op::Pinball {
                pred,
                rows,
                targets,
                betas,
            } => {
                let t = self.val(*pred);
                let c = t.cols();
                let scale = g[0] / T::of_usize(rows.len());
                let mut d = vec![T::zero(); t.len()];
                for (&r, &y) in rows.iter().zip(targets) {
                    for (j, &beta) in betas.iter().enumerate() {
                        let u = y - t.get(r, j);
                        let slope = if u < T::zero() { beta - T::one() } else { beta };
                        d[r * c + j] -= slope * scale;
                    }
                }
                acc(*pred, &|i| d[i]);
            }
            Op::SquaredError(a, target) => {
                let t = self.val(*a);
                let scale = T::of(2.0) * g[0] / T::of_usize(t.rows());
                let x = t.data();
                acc(*a, &|i| (x[i] - target[i]) * scale);
            }
            Op::Dropout(a, mask) => acc(*a, &|i| g[i] * mask[i]),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn pinball<T: Scalar>(beta: T, u: T) -> T {
    (beta * u).max((beta - T::one()) * u)
}

pub(crate) fn softmax_rows_raw<T: Scalar>(data: &[T], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(c) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let exps: Vec<f64> = row.iter().map(|&z| (z - m).as_f64().exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| T::of(e / total)));
    }
    out
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            for (d, &bpj) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *d += aip * bpj;
            }
        }
    }
    out
}

/// `G·Bᵀ` for `G: m×n`, `B: k×n`.
fn matmul_bt<T: Scalar>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            out[i * k + p] = gi.iter().zip(bp).fold(T::zero(), |s, (&x, &y)| s + x * y);
        }
    }
    out
}

/// `Aᵀ·G` for `A: m×k`, `G: m×n`.
fn matmul_at<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            for (d, &x) in out[p * n..(p + 1) * n].iter_mut().zip(gi) {
                *d += aip * x;
            }
        }
    }
    out
}
