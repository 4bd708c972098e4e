use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::graph::Graph;

const PAGERANK_DAMPING: f64 = 0.85;
const PAGERANK_TOL: f64 = 1e-10;
const PAGERANK_MAX_ITER: usize = 10_000;
const SOURCE_BLOCK: usize = 64;

/// Per-node structural features, one column per field.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkFeatures {
    pub degree: Vec<f64>,
    pub clustering: Vec<f64>,
    pub pagerank: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub closeness: Vec<f64>,
    pub harmonic: Vec<f64>,
}

impl NetworkFeatures {
    pub const COLUMNS: [&'static str; 6] = ["degree", "clustering", "pagerank", "betweenness", "closeness", "harmonic"];

    pub fn num_nodes(&self) -> usize {
        self.degree.len()
    }

    fn columns(&self) -> [&[f64]; 6] {
        [
            &self.degree,
            &self.clustering,
            &self.pagerank,
            &self.betweenness,
            &self.closeness,
            &self.harmonic,
        ]
    }

    /// Row-major `N × 6` matrix in [`Self::COLUMNS`] order.
    pub fn to_matrix(&self) -> Vec<f64> {
        let cols = self.columns();
        (0..self.num_nodes()).flat_map(|v| cols.map(|c| c[v])).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_id");
        for c in Self::COLUMNS {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        let cols = self.columns();
        for v in 0..self.num_nodes() {
            let _ = write!(out, "{v}");
            for c in cols {
                let _ = write!(out, ",{}", c[v]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn network_features(g: &Graph) -> NetworkFeatures {
    let (closeness, harmonic) = closeness_harmonic(g);
    NetworkFeatures {
        degree: g.degrees().into_iter().map(|d| d as f64).collect(),
        clustering: clustering(g),
        pagerank: pagerank(g),
        betweenness: betweenness(g),
        closeness,
        harmonic,
    }
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Local clustering coefficient; zero for degree below two.
pub fn clustering(g: &Graph) -> Vec<f64> {
    (0..g.num_nodes())
        .map(|u| {
            let nb = g.neighbors(u);
            let d = nb.len();
            if d < 2 {
                return 0.0;
            }
            let links: usize = nb.iter().map(|&v| sorted_intersection(nb, g.neighbors(v))).sum();
            // every triangle edge among neighbors is seen from both ends
            (links / 2) as f64 / (d * (d - 1) / 2) as f64
        })
        .collect()
}

/// Power iteration with uniform teleportation; dangling mass is spread
/// uniformly.
pub fn pagerank(g: &Graph) -> Vec<f64> {
    let n = g.num_nodes();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    for _ in 0..PAGERANK_MAX_ITER {
        let dangling: f64 = (0..n).filter(|&u| g.degree(u) == 0).map(|u| x[u]).sum();
        let base = (1.0 - PAGERANK_DAMPING) / nf + PAGERANK_DAMPING * dangling / nf;
        let next: Vec<f64> = (0..n)
            .map(|v| {
                let inflow: f64 = g.neighbors(v).iter().map(|&u| x[u] / g.degree(u) as f64).sum();
                base + PAGERANK_DAMPING * inflow
            })
            .collect();
        let diff: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if diff < PAGERANK_TOL {
            break;
        }
    }
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

/// Brandes accumulation from one source; counts ordered pairs.
fn brandes_from(g: &Graph, s: usize, acc: &mut [f64]) {
    let n = g.num_nodes();
    let mut sigma = vec![0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    sigma[s] = 1.0;
    dist[s] = 0;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in g.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
    let mut delta = vec![0f64; n];
    for &w in order.iter().rev() {
        for &v in g.neighbors(w) {
            if dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
        }
        if w != s {
            acc[w] += delta[w];
        }
    }
}

/// Betweenness centrality normalized by `(N−1)(N−2)` over ordered pairs,
/// i.e. `2/((N−1)(N−2))` over unordered pairs. Sources are processed in
/// fixed blocks and summed in block order, so the result does not depend
/// on the thread count.
pub fn betweenness(g: &Graph) -> Vec<f64> {
    let n = g.num_nodes();
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCE_BLOCK)
        .map(|block| {
            let mut acc = vec![0f64; n];
            for &s in block {
                brandes_from(g, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0f64; n];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let scale = if n > 2 { 1.0 / ((n - 1) * (n - 2)) as f64 } else { 0.0 };
    total.iter_mut().for_each(|v| *v *= scale);
    total
}

fn bfs_distances(g: &Graph, s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    let mut queue = VecDeque::from([s]);
    dist[s] = 0;
    while let Some(v) = queue.pop_front() {
        for &w in g.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Closeness with the component-size scaling `(r−1)/(N−1) · (r−1)/Σd`
/// (`r` = nodes reachable from `u`, itself included) and harmonic
/// centrality `Σ_{v≠u} 1/d(u,v)`.
pub fn closeness_harmonic(g: &Graph) -> (Vec<f64>, Vec<f64>) {
    let n = g.num_nodes();
    (0..n)
        .into_par_iter()
        .map(|u| {
            let dist = bfs_distances(g, u);
            let mut reach = 0usize;
            let mut total = 0usize;
            let mut harmonic = 0.0;
            for &d in &dist {
                if d != usize::MAX && d > 0 {
                    reach += 1;
                    total += d;
                    harmonic += 1.0 / d as f64;
                }
            }
            let closeness = if total > 0 && n > 1 {
                (reach as f64 / total as f64) * (reach as f64 / (n - 1) as f64)
            } else {
                0.0
            };
            (closeness, harmonic)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sums `σ_st(v)/σ_st` over unordered pairs by explicit enumeration of
    /// distances and path counts.
    fn brute_force_betweenness(g: &Graph) -> Vec<f64> {
        let n = g.num_nodes();
        let dist: Vec<Vec<usize>> = (0..n).map(|s| bfs_distances(g, s)).collect();
        let count = |s: usize, t: usize| -> f64 {
            // number of shortest paths by dynamic programming over distance layers
            let mut sigma = vec![0f64; n];
            sigma[s] = 1.0;
            let mut layer: Vec<usize> = (0..n).filter(|&v| dist[s][v] != usize::MAX).collect();
            layer.sort_by_key(|&v| dist[s][v]);
            for &v in &layer {
                for &w in g.neighbors(v) {
                    if dist[s][w] == dist[s][v] + 1 {
                        sigma[w] += sigma[v];
                    }
                }
            }
            sigma[t]
        };
        let mut bc = vec![0.0; n];
        for s in 0..n {
            for t in s + 1..n {
                if dist[s][t] == usize::MAX {
                    continue;
                }
                let st = count(s, t);
                for v in 0..n {
                    if v != s && v != t && dist[s][v] != usize::MAX && dist[v][t] != usize::MAX && dist[s][v] + dist[v][t] == dist[s][t] {
                        bc[v] += count(s, v) * count(v, t) / st;
                    }
                }
            }
        }
        let scale = if n > 2 { 2.0 / ((n - 1) * (n - 2)) as f64 } else { 0.0 };
        bc.iter().map(|b| b * scale).collect()
    }

    #[test]
    fn two_nodes_pagerank_is_even() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let pr = pagerank(&g);
        assert!((pr[0] - 0.5).abs() < 1e-12 && (pr[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn triangle_features() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let f = network_features(&g);
        assert_eq!(f.clustering, vec![1.0; 3]);
        assert_eq!(f.betweenness, vec![0.0; 3]);
        assert_eq!(f.closeness, vec![1.0; 3]);
        assert_eq!(f.harmonic, vec![2.0; 3]);
    }

    #[test]
    fn path_betweenness() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(betweenness(&g), vec![0.0, 1.0, 0.0]);
        assert_eq!(brute_force_betweenness(&g), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn closeness_scales_by_component() {
        // Components {0,1} and {2,3,4} in a path; isolated node 5.
        let g = Graph::from_edges(6, &[(0, 1), (2, 3), (3, 4)]).unwrap();
        let (c, h) = closeness_harmonic(&g);
        assert!((c[0] - 1.0 / 5.0).abs() < 1e-15);
        assert!((c[3] - (2.0 / 2.0) * (2.0 / 5.0)).abs() < 1e-15);
        assert!((c[2] - (2.0 / 3.0) * (2.0 / 5.0)).abs() < 1e-15);
        assert_eq!((c[5], h[5]), (0.0, 0.0));
        assert_eq!(h[2], 1.5);
    }

    #[test]
    fn csv_layout() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let csv = network_features(&g).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "node_id,degree,clustering,pagerank,betweenness,closeness,harmonic");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,1,0,0.5"));
    }

    fn connected_graph(max_n: usize) -> impl Strategy<Value = Graph> {
        (3..=max_n).prop_flat_map(|n| {
            let pairs = n * (n - 1) / 2;
            (Just(n), proptest::collection::vec(any::<bool>(), pairs), proptest::collection::vec(any::<usize>(), n))
        })
        .prop_map(|(n, mask, parents)| {
            let mut edges = Vec::new();
            // random spanning tree keeps the graph connected
            for v in 1..n {
                edges.push((parents[v] % v, v));
            }
            let mut k = 0;
            for u in 0..n {
                for v in u + 1..n {
                    if mask[k] {
                        edges.push((u, v));
                    }
                    k += 1;
                }
            }
            Graph::from_edges(n, &edges).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn brandes_matches_enumeration(g in connected_graph(10)) {
            let fast = betweenness(&g);
            let slow = brute_force_betweenness(&g);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }

        #[test]
        fn pagerank_is_a_distribution_and_label_free(g in connected_graph(12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let pr = pagerank(&g);
            prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
            perm.shuffle(&mut crate::rng::seeded(seed));
            let moved = pagerank(&g.permuted(&perm).unwrap());
            for (v, &p) in perm.iter().enumerate() {
                prop_assert!((pr[v] - moved[p]).abs() < 1e-9);
            }
        }
    }
}
