//! Seeded synthetic datasets: a homophilous stochastic block model for
//! classification and a graph regression task whose noise amplitude is
//! smooth along edges.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, NodeData};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Class means are `separation · e_c`, so distinct means lie
    /// `separation·√2` apart.
    pub separation: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            num_nodes: 2000,
            num_classes: 5,
            p_in: 0.01,
            p_out: 0.0005,
            feature_dim: 16,
            separation: 1.0,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("SBM needs at least two classes"));
        }
        if self.num_nodes < 2 {
            return Err(Error::invalid("SBM needs at least two nodes"));
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return Err(Error::invalid("edge probabilities must satisfy 0 ≤ p_out ≤ p_in ≤ 1"));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::invalid("feature_dim must be at least num_classes"));
        }
        if !(self.separation >= 0.0 && self.feature_noise >= 0.0) {
            return Err(Error::invalid("separation and feature_noise must be non-negative"));
        }
        Ok(())
    }
}

const STREAM_BLOCKS: u64 = 1;
const STREAM_EDGES: u64 = 2;
const STREAM_FEATURES: u64 = 3;
const STREAM_WEIGHTS: u64 = 4;
const STREAM_NOISE: u64 = 5;

fn sbm_edges(blocks: &[usize], p_in: f64, p_out: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut r = rng::derive(seed, STREAM_EDGES);
    let n = blocks.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if blocks[u] == blocks[v] { p_in } else { p_out };
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn gaussian_features(blocks: &[usize], dim: usize, separation: f64, noise: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::derive(seed, STREAM_FEATURES);
    let mut x = Vec::with_capacity(blocks.len() * dim);
    for &b in blocks {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut r);
            let mu = if j == b { separation } else { 0.0 };
            x.push(mu + noise * z);
        }
    }
    x
}

fn uniform_blocks(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::derive(seed, STREAM_BLOCKS);
    (0..n).map(|_| r.random_range(0..k)).collect()
}

pub fn generate_sbm_classification(cfg: &SbmConfig) -> Result<(Graph, NodeData)> {
    cfg.validate()?;
    let y = uniform_blocks(cfg.num_nodes, cfg.num_classes, cfg.seed);
    let g = Graph::from_edges(cfg.num_nodes, &sbm_edges(&y, cfg.p_in, cfg.p_out, cfg.seed))?;
    let x = gaussian_features(&y, cfg.feature_dim, cfg.separation, cfg.feature_noise, cfg.seed);
    let data = NodeData::new(
        x,
        cfg.feature_dim,
        Labels::Classes {
            num_classes: cfg.num_classes,
            y,
        },
    )?;
    Ok((g, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegSynthConfig {
    pub num_nodes: usize,
    /// Number of latent communities driving edges and feature means.
    pub num_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub separation: f64,
    pub feature_noise: f64,
    /// Entries of the regression weight vector are `N(0, weight_scale²)`.
    pub weight_scale: f64,
    /// Rounds of neighborhood averaging applied to the noise amplitude.
    pub smoothing_steps: usize,
    pub noise_scale: f64,
    /// Amplitudes are rescaled into `[1, hetero_scale]`.
    pub hetero_scale: f64,
    pub seed: u64,
}

impl Default for RegSynthConfig {
    fn default() -> Self {
        Self {
            num_nodes: 2000,
            num_blocks: 5,
            p_in: 0.01,
            p_out: 0.0005,
            feature_dim: 8,
            separation: 1.0,
            feature_noise: 1.0,
            weight_scale: 1.0,
            smoothing_steps: 5,
            noise_scale: 1.0,
            hetero_scale: 4.0,
            seed: 0,
        }
    }
}

impl RegSynthConfig {
    pub fn validate(&self) -> Result<()> {
        SbmConfig {
            num_nodes: self.num_nodes,
            num_classes: self.num_blocks,
            p_in: self.p_in,
            p_out: self.p_out,
            feature_dim: self.feature_dim,
            separation: self.separation,
            feature_noise: self.feature_noise,
            seed: self.seed,
        }
        .validate()?;
        if !(self.hetero_scale >= 1.0 && self.noise_scale >= 0.0 && self.weight_scale >= 0.0) {
            return Err(Error::invalid("need hetero_scale ≥ 1 and non-negative noise/weight scales"));
        }
        Ok(())
    }
}

/// Ground truth behind a regression dataset: `y = mean + noise_scale·amplitude·ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegTruth {
    pub mean: Vec<f64>,
    pub amplitude: Vec<f64>,
}

/// Averages each node's value with its neighbors (self included).
fn smooth(g: &Graph, values: &[f64]) -> Vec<f64> {
    (0..g.num_nodes())
        .map(|u| {
            let s: f64 = values[u] + g.neighbors(u).iter().map(|&v| values[v]).sum::<f64>();
            s / (g.degree(u) + 1) as f64
        })
        .collect()
}

pub fn generate_correlated_regression(cfg: &RegSynthConfig) -> Result<(Graph, NodeData)> {
    generate_correlated_regression_with_truth(cfg).map(|(g, d, _)| (g, d))
}

/// The amplitude starts as a logistic function of a random feature
/// direction, so it is observable from the data; smoothing then spreads it
/// along edges.
pub fn generate_correlated_regression_with_truth(cfg: &RegSynthConfig) -> Result<(Graph, NodeData, RegTruth)> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let d = cfg.feature_dim;
    let blocks = uniform_blocks(n, cfg.num_blocks, cfg.seed);
    let g = Graph::from_edges(n, &sbm_edges(&blocks, cfg.p_in, cfg.p_out, cfg.seed))?;
    let x = gaussian_features(&blocks, d, cfg.separation, cfg.feature_noise, cfg.seed);

    let mut wr = rng::derive(cfg.seed, STREAM_WEIGHTS);
    let w: Vec<f64> = (0..d)
        .map(|_| cfg.weight_scale * Distribution::<f64>::sample(&StandardNormal, &mut wr))
        .collect();
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut wr)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    u.iter_mut().for_each(|v| *v /= norm);

    let row = |v: usize| &x[v * d..(v + 1) * d];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let mean: Vec<f64> = (0..n).map(|v| dot(&w, row(v))).collect();

    let mut raw: Vec<f64> = (0..n).map(|v| 1.0 / (1.0 + (-2.0 * dot(&u, row(v))).exp())).collect();
    for _ in 0..cfg.smoothing_steps {
        raw = smooth(&g, &raw);
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let amplitude: Vec<f64> = raw
        .iter()
        .map(|&r| {
            let frac = if span > 0.0 { (r - lo) / span } else { 0.0 };
            1.0 + (cfg.hetero_scale - 1.0) * frac
        })
        .collect();

    let mut er = rng::derive(cfg.seed, STREAM_NOISE);
    let y: Vec<f64> = (0..n)
        .map(|v| {
            let eps: f64 = StandardNormal.sample(&mut er);
            mean[v] + cfg.noise_scale * amplitude[v] * eps
        })
        .collect();
    let data = NodeData::new(x, d, Labels::Targets(y))?;
    Ok((g, data, RegTruth { mean, amplitude }))
}
