//! Dataset bundle directories.
//!
//! ```text
//! meta.json      {"task": "classification"|"regression", "num_nodes": N,
//!                 "num_features": d, "num_classes": K}
//! edges.tsv      one edge per line: two 0-based node ids, tab separated
//! features.tsv   N lines of d tab-separated floats
//! labels.tsv     N lines: integer class or float target
//! ```
//!
//! Edges are read as undirected: reversed duplicates, repeated lines and
//! self-loops collapse into one simple edge (see [`Graph::from_edges`]).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, NodeData, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub task: Task,
    pub num_nodes: usize,
    pub num_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

fn bundle_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Bundle {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| bundle_err(path, 0, e.to_string()))
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<(Graph, NodeData)> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: BundleMeta = serde_json::from_str(&read(&meta_path)?)
        .map_err(|e| bundle_err(&meta_path, e.line(), e.to_string()))?;
    let n = meta.num_nodes;
    let d = meta.num_features;
    let k = match (meta.task, meta.num_classes) {
        (Task::Classification, Some(k)) if k >= 2 => Some(k),
        (Task::Classification, _) => {
            return Err(bundle_err(&meta_path, 1, "classification needs num_classes >= 2"))
        }
        (Task::Regression, _) => None,
    };

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (no, line) in lines(&read(&edges_path)?) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(bundle_err(&edges_path, no, format!("expected 2 columns, found {}", cols.len())));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bundle_err(&edges_path, no, format!("invalid node id {s:?}")))
        };
        let (u, v) = (parse(cols[0])?, parse(cols[1])?);
        if u >= n || v >= n {
            return Err(bundle_err(&edges_path, no, format!("edge ({u}, {v}) outside 0..{n}")));
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edges(n, &edges)?;

    let feat_path = dir.join("features.tsv");
    let mut features = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (no, line) in lines(&read(&feat_path)?) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != d {
            return Err(bundle_err(&feat_path, no, format!("expected {d} columns, found {}", cols.len())));
        }
        for c in cols {
            let x: f64 = c
                .trim()
                .parse()
                .map_err(|_| bundle_err(&feat_path, no, format!("invalid float {c:?}")))?;
            features.push(x);
        }
        rows += 1;
    }
    if rows != n {
        return Err(bundle_err(&feat_path, rows, format!("expected {n} rows, found {rows}")));
    }

    let label_path = dir.join("labels.tsv");
    let text = read(&label_path)?;
    let labels = match k {
        Some(k) => {
            let mut y = Vec::with_capacity(n);
            for (no, line) in lines(&text) {
                let c: usize = line
                    .trim()
                    .parse()
                    .map_err(|_| bundle_err(&label_path, no, format!("invalid class {line:?}")))?;
                if c >= k {
                    return Err(bundle_err(&label_path, no, format!("class {c} not below num_classes {k}")));
                }
                y.push(c);
            }
            Labels::Classes { num_classes: k, y }
        }
        None => {
            let mut y = Vec::with_capacity(n);
            for (no, line) in lines(&text) {
                let t: f64 = line
                    .trim()
                    .parse()
                    .map_err(|_| bundle_err(&label_path, no, format!("invalid target {line:?}")))?;
                y.push(t);
            }
            Labels::Targets(y)
        }
    };
    if labels.len() != n {
        return Err(bundle_err(&label_path, labels.len(), format!("expected {n} rows, found {}", labels.len())));
    }
    let data = NodeData::new(features, d, labels)?;
    Ok((graph, data))
}

pub fn save_bundle(graph: &Graph, data: &NodeData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if graph.num_nodes() != data.num_nodes() {
        return Err(Error::invalid("graph and node data disagree on the node count"));
    }
    fs::create_dir_all(dir)?;
    let meta = BundleMeta {
        task: data.task(),
        num_nodes: data.num_nodes(),
        num_features: data.num_features(),
        num_classes: data.num_classes(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;

    let mut out = String::new();
    for (u, v) in graph.edges() {
        writeln!(out, "{u}\t{v}").unwrap();
    }
    fs::write(dir.join("edges.tsv"), &out)?;

    out.clear();
    for v in 0..data.num_nodes() {
        let row = data.feature_row(v);
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                out.push('\t');
            }
            // Display for f64 is shortest round-trip
            write!(out, "{x}").unwrap();
        }
        out.push('\n');
    }
    fs::write(dir.join("features.tsv"), &out)?;

    out.clear();
    match data.labels() {
        Labels::Classes { y, .. } => y.iter().for_each(|c| writeln!(out, "{c}").unwrap()),
        Labels::Targets(y) => y.iter().for_each(|t| writeln!(out, "{t}").unwrap()),
    }
    fs::write(dir.join("labels.tsv"), &out)?;
    Ok(())
}

/// Paths of the four bundle files, in the order they are written.
pub fn bundle_files(dir: impl AsRef<Path>) -> [PathBuf; 4] {
    let dir = dir.as_ref();
    ["meta.json", "edges.tsv", "features.tsv", "labels.tsv"].map(|f| dir.join(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Graph, NodeData) {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let data = NodeData::new(
            vec![0.1, -2.5, 1.0 / 3.0, 4.0, 1e-300, -0.0],
            2,
            Labels::Classes {
                num_classes: 2,
                y: vec![0, 1, 1],
            },
        )
        .unwrap();
        (g, data)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (g, data) = tiny();
        save_bundle(&g, &data, dir.path()).unwrap();
        let (g2, data2) = load_bundle(dir.path()).unwrap();
        assert_eq!(g.csr_offsets(), g2.csr_offsets());
        assert_eq!(g.csr_neighbors(), g2.csr_neighbors());
        assert_eq!(data, data2);
    }

    #[test]
    fn regression_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let data = NodeData::new(vec![1.5, 2.5], 1, Labels::Targets(vec![0.1, -7.25])).unwrap();
        save_bundle(&g, &data, dir.path()).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap(), (g, data));
    }

    #[test]
    fn class_out_of_range_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let (g, data) = tiny();
        save_bundle(&g, &data, dir.path()).unwrap();
        fs::write(dir.path().join("labels.tsv"), "0\n5\n1\n").unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        match &err {
            Error::Bundle { file, line, .. } => {
                assert!(file.ends_with("labels.tsv"));
                assert_eq!(*line, 2);
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(err.to_string().contains("labels.tsv:2"));
    }

    #[test]
    fn wrong_feature_width_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (g, data) = tiny();
        save_bundle(&g, &data, dir.path()).unwrap();
        fs::write(dir.path().join("features.tsv"), "1\t2\n3\n5\t6\n").unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Bundle { line: 2, .. }), "{err}");
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (g, data) = tiny();
        save_bundle(&g, &data, dir.path()).unwrap();
        fs::write(dir.path().join("labels.tsv"), "0\n1\n").unwrap();
        assert!(load_bundle(dir.path()).is_err());
    }
}
