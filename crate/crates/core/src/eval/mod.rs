//! Conditional-coverage diagnostics: label-agnostic network features,
//! worst-slice coverage, and the edge gap statistic for interval lengths.

mod centrality;
mod gap;
mod wsc;

pub use centrality::{betweenness, closeness_harmonic, clustering, network_features, pagerank, NetworkFeatures};
pub use gap::{edge_length_gap_test, GapTest};
pub use wsc::{worst_slice, worst_slice_coverage, WscConfig, WscResult};
