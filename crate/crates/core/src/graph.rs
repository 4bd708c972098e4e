//! Undirected simple graphs, node data, and the randomized transductive split.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Undirected simple graph in CSR form. Neighbor lists are strictly
/// ascending, symmetric, and contain no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds the symmetrized, deduplicated, self-loop-free graph spanned by
    /// `edges`. Directed input is treated as undirected.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::EdgeOutOfRange(u, v, num_nodes));
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(&list);
            offsets.push(neighbors.len());
        }
        Ok(Self { offsets, neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|u| self.degree(u)).collect()
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    /// Relabels nodes so that old node `u` becomes `perm[u]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes())?;
        let edges: Vec<_> = self.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        Self::from_edges(self.num_nodes(), &edges)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::invalid(format!(
            "permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Symmetric GCN propagation operator `D̃^{-1/2}(A+I)D̃^{-1/2}` where `D̃` is
/// the degree matrix of `A+I`. Self-loops exist only here, never in [`Graph`].
pub fn normalized_adjacency<T: Scalar>(g: &Graph) -> CsrMatrix<T> {
    let n = g.num_nodes();
    let deg: Vec<usize> = (0..n).map(|u| g.degree(u) + 1).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(g.neighbors.len() + n);
    let mut values = Vec::with_capacity(g.neighbors.len() + n);
    offsets.push(0);
    for u in 0..n {
        let nb = g.neighbors(u);
        let split = nb.partition_point(|&v| v < u);
        let cols = nb[..split]
            .iter()
            .copied()
            .chain(std::iter::once(u))
            .chain(nb[split..].iter().copied());
        for v in cols {
            indices.push(v);
            // integer product first: exact, symmetric, and 1/sqrt(4) is exactly 0.5
            values.push(T::one() / T::of_usize(deg[u] * deg[v]).sqrt());
        }
        offsets.push(indices.len());
    }
    CsrMatrix::new(n, n, offsets, indices, values).expect("adjacency is well formed")
}

/// Shared-ownership handle so the same operator can sit on many tapes.
pub fn propagation<T: Scalar>(g: &Graph) -> Arc<CsrMatrix<T>> {
    Arc::new(normalized_adjacency(g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes { num_classes: usize, y: Vec<usize> },
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { y, .. } => y.len(),
            Labels::Targets(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Labels::Classes { y, .. } => Some(y),
            Labels::Targets(_) => None,
        }
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match self {
            Labels::Targets(y) => Some(y),
            Labels::Classes { .. } => None,
        }
    }
}

/// Node features (row-major `num_nodes × num_features`) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    features: Vec<f64>,
    num_features: usize,
    labels: Labels,
}

impl NodeData {
    pub fn new(features: Vec<f64>, num_features: usize, labels: Labels) -> Result<Self> {
        let n = labels.len();
        if features.len() != n * num_features {
            return Err(Error::invalid(format!(
                "feature matrix has {} values, expected {n} x {num_features}",
                features.len()
            )));
        }
        if let Labels::Classes { num_classes, y } = &labels {
            if *num_classes < 2 {
                return Err(Error::invalid("classification needs at least 2 classes"));
            }
            if let Some((i, c)) = y.iter().enumerate().find(|(_, &c)| c >= *num_classes) {
                return Err(Error::invalid(format!(
                    "node {i} has class {c}, but only {num_classes} classes exist"
                )));
            }
        }
        Ok(Self {
            features,
            num_features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, v: usize) -> &[f64] {
        &self.features[v * self.num_features..(v + 1) * self.num_features]
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn task(&self) -> Task {
        match self.labels {
            Labels::Classes { .. } => Task::Classification,
            Labels::Targets(_) => Task::Regression,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.labels {
            Labels::Classes { num_classes, .. } => Some(num_classes),
            Labels::Targets(_) => None,
        }
    }

    /// Relabels nodes so that old node `u` becomes `perm[u]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        check_permutation(perm, n)?;
        let d = self.num_features;
        let mut features = vec![0.0; n * d];
        for u in 0..n {
            features[perm[u] * d..(perm[u] + 1) * d].copy_from_slice(self.feature_row(u));
        }
        let labels = match &self.labels {
            Labels::Classes { num_classes, y } => {
                let mut out = vec![0; n];
                for u in 0..n {
                    out[perm[u]] = y[u];
                }
                Labels::Classes {
                    num_classes: *num_classes,
                    y: out,
                }
            }
            Labels::Targets(y) => {
                let mut out = vec![0.0; n];
                for u in 0..n {
                    out[perm[u]] = y[u];
                }
                Labels::Targets(out)
            }
        };
        Self::new(features, d, labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub calib_cap: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.2,
            valid_frac: 0.1,
            calib_cap: 1000,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.train_frac) || !open(self.valid_frac) {
            return Err(Error::invalid("train_frac and valid_frac must lie in (0, 1)"));
        }
        if self.train_frac + self.valid_frac >= 1.0 {
            return Err(Error::invalid("train_frac + valid_frac must be below 1"));
        }
        if self.calib_cap == 0 {
            return Err(Error::invalid("calib_cap must be positive"));
        }
        Ok(())
    }
}

/// Disjoint node sets of the transductive protocol. Each set is kept in
/// ascending node order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    /// `calib ∪ test`, sorted.
    pub fn held_out(&self) -> Vec<usize> {
        let mut pool: Vec<usize> = self.calib.iter().chain(&self.test).copied().collect();
        pool.sort_unstable();
        pool
    }
}

fn frac_count(frac: f64, n: usize) -> usize {
    // tolerate representation error such as 0.7 * 10 = 6.999...
    (frac * n as f64 + 1e-9).floor() as usize
}

/// Cuts a shuffled pool into a calibration set of `min(cap, ⌊|pool|/2⌋)`
/// nodes and a test set holding the rest. The pool is sorted first so the
/// result depends only on its contents and the seed.
pub fn split_pool(pool: &[usize], calib_cap: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut nodes = pool.to_vec();
    nodes.sort_unstable();
    nodes.shuffle(&mut rng::seeded(seed));
    let n_calib = calib_cap.min(nodes.len() / 2);
    if n_calib == 0 || nodes.len() == n_calib {
        return Err(Error::invalid(format!(
            "pool of {} nodes leaves an empty calibration or test set",
            nodes.len()
        )));
    }
    let mut test = nodes.split_off(n_calib);
    nodes.sort_unstable();
    test.sort_unstable();
    Ok((nodes, test))
}

/// Seeded Fisher–Yates permutation cut into train / valid / calib / test.
pub fn random_split(g: &Graph, cfg: &SplitConfig) -> Result<DataSplit> {
    cfg.validate()?;
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::invalid("cannot split an empty graph"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::seeded(cfg.seed);
    order.shuffle(&mut rng);
    let n_train = frac_count(cfg.train_frac, n);
    let n_valid = frac_count(cfg.valid_frac, n);
    let rest = &order[n_train + n_valid..];
    let n_calib = cfg.calib_cap.min(rest.len() / 2);
    if n_calib == 0 || rest.len() == n_calib {
        return Err(Error::invalid(format!(
            "{n} nodes leave an empty calibration or test set"
        )));
    }
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(DataSplit {
        train: sorted(&order[..n_train]),
        valid: sorted(&order[n_train..n_train + n_valid]),
        calib: sorted(&rest[..n_calib]),
        test: sorted(&rest[n_calib..]),
    })
}
