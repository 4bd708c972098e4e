use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTest {
    pub mean_connected_gap: f64,
    pub mean_random_gap: f64,
    /// One-sided Mann–Whitney p-value for "connected gaps are smaller".
    pub p_value: f64,
    pub pairs: usize,
}

/// Compares `|len_u − len_v|` over all edges against as many uniformly drawn
/// non-adjacent pairs.
pub fn edge_length_gap_test(g: &Graph, lengths: &[f64], seed: u64) -> Result<GapTest> {
    let n = g.num_nodes();
    if lengths.len() != n {
        return Err(Error::invalid(format!("{} lengths for {n} nodes", lengths.len())));
    }
    if lengths.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("interval lengths must be finite"));
    }
    let e = g.num_edges();
    if e == 0 {
        return Err(Error::invalid("gap test needs a graph with edges"));
    }
    if e == n * (n - 1) / 2 {
        return Err(Error::invalid("complete graph has no non-adjacent pairs"));
    }
    let connected: Vec<f64> = g.edges().map(|(u, v)| (lengths[u] - lengths[v]).abs()).collect();
    let mut r = rng::seeded(seed);
    let mut random = Vec::with_capacity(e);
    while random.len() < e {
        let u = r.random_range(0..n);
        let v = r.random_range(0..n);
        if u != v && !g.has_edge(u, v) {
            random.push((lengths[u] - lengths[v]).abs());
        }
    }
    let mw = stats::mann_whitney_less(&connected, &random)?;
    Ok(GapTest {
        mean_connected_gap: stats::mean(&connected),
        mean_random_gap: stats::mean(&random),
        p_value: mw.p_less,
        pairs: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_lengths() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let t = edge_length_gap_test(&g, &[2.0; 5], 0).unwrap();
        assert_eq!((t.mean_connected_gap, t.mean_random_gap, t.p_value), (0.0, 0.0, 0.5));
    }

    #[test]
    fn path_with_index_lengths() {
        let n = 8;
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = Graph::from_edges(n, &edges).unwrap();
        let lengths: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let t = edge_length_gap_test(&g, &lengths, 1).unwrap();
        assert_eq!(t.mean_connected_gap, 1.0);
        assert!(t.mean_random_gap > 1.0);
        assert!(t.p_value < 0.01);
    }

    #[test]
    fn degenerate_graphs_rejected() {
        let empty = Graph::from_edges(3, &[]).unwrap();
        assert!(edge_length_gap_test(&empty, &[1.0; 3], 0).is_err());
        let complete = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(edge_length_gap_test(&complete, &[1.0, 2.0, 3.0], 0).is_err());
    }
}
