use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WscConfig {
    /// Minimum fraction of selection nodes inside a slab.
    pub delta: f64,
    pub directions: usize,
    /// Fraction of nodes used to choose the slab; the rest estimate it.
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for WscConfig {
    fn default() -> Self {
        Self {
            delta: 0.25,
            directions: 1000,
            split_fraction: 0.5,
            seed: 0,
        }
    }
}

impl WscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if self.directions == 0 {
            return Err(Error::invalid("at least one direction is required"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid("split_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WscResult {
    /// Coverage of the selected slab on the estimation nodes.
    pub wsc: f64,
    /// Coverage of the selected slab on the selection nodes.
    pub select_coverage: f64,
    /// Coverage of all estimation nodes.
    pub marginal: f64,
    pub direction: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub select_count: usize,
    pub estimate_count: usize,
}

/// Column-standardized copy; constant columns become zero.
fn standardize(x: &[f64], d: usize) -> Vec<f64> {
    let n = x.len() / d;
    let mut out = x.to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            out[i * d + j] = if sd > 0.0 { (x[i * d + j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

struct Slab {
    coverage: f64,
    lower: f64,
    upper: f64,
}

/// Lowest-coverage window of at least `min_len` consecutive projections.
fn scan_direction(proj: &[f64], covered: &[bool], min_len: usize) -> Slab {
    let mut idx: Vec<usize> = (0..proj.len()).collect();
    idx.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let mut prefix = vec![0usize; idx.len() + 1];
    for (k, &i) in idx.iter().enumerate() {
        prefix[k + 1] = prefix[k] + covered[i] as usize;
    }
    let n = idx.len();
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..=n - min_len {
        for j in i + min_len..=n {
            let c = (prefix[j] - prefix[i]) as f64 / (j - i) as f64;
            if c < best.0 {
                best = (c, i, j - 1);
            }
        }
    }
    Slab {
        coverage: best.0,
        lower: proj[idx[best.1]],
        upper: proj[idx[best.2]],
    }
}

/// Worst-slice coverage of `covered` over slabs `{x : a ≤ vᵀx ≤ b}` of the
/// row-major feature matrix `x` (`d` columns).
pub fn worst_slice(x: &[f64], d: usize, covered: &[bool], cfg: &WscConfig) -> Result<WscResult> {
    cfg.validate()?;
    let n = covered.len();
    if d == 0 || x.len() != n * d {
        return Err(Error::shape("worst_slice", format!("{} values for {n} nodes × {d} features", x.len())));
    }
    if n < 2 {
        return Err(Error::invalid("worst-slice coverage needs at least two nodes"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features must be finite"));
    }
    let z = standardize(x, d);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derive(cfg.seed, 0));
    let n_sel = ((cfg.split_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (select, estimate) = order.split_at(n_sel);
    let min_len = (cfg.delta * n_sel as f64 - 1e-9).ceil().max(1.0) as usize;
    if min_len > n_sel {
        return Err(Error::invalid("no slab reaches the requested mass"));
    }

    let mut dir_rng = rng::derive(cfg.seed, 1);
    let dirs: Vec<Vec<f64>> = (0..cfg.directions)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut dir_rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|a| a / norm).collect();
            }
        })
        .collect();
    let project = |v: &[f64], i: usize| -> f64 { z[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum() };
    let sel_cov: Vec<bool> = select.iter().map(|&i| covered[i]).collect();

    let slabs: Vec<Slab> = dirs
        .par_iter()
        .map(|v| {
            let proj: Vec<f64> = select.iter().map(|&i| project(v, i)).collect();
            scan_direction(&proj, &sel_cov, min_len)
        })
        .collect();
    let (k, slab) = slabs
        .iter()
        .enumerate()
        .fold(None::<(usize, &Slab)>, |acc, (k, s)| match acc {
            Some((_, b)) if b.coverage <= s.coverage => acc,
            _ => Some((k, s)),
        })
        .expect("at least one direction");

    let est_cov: usize = estimate.iter().filter(|&&i| covered[i]).count();
    let marginal = est_cov as f64 / estimate.len() as f64;
    let inside: Vec<usize> = estimate
        .iter()
        .copied()
        .filter(|&i| {
            let p = project(&dirs[k], i);
            slab.lower <= p && p <= slab.upper
        })
        .collect();
    let wsc = if inside.is_empty() {
        marginal
    } else {
        inside.iter().filter(|&&i| covered[i]).count() as f64 / inside.len() as f64
    };
    let select_count = select
        .iter()
        .filter(|&&i| {
            let p = project(&dirs[k], i);
            slab.lower <= p && p <= slab.upper
        })
        .count();
    Ok(WscResult {
        wsc,
        select_coverage: slab.coverage,
        marginal,
        direction: dirs[k].clone(),
        lower: slab.lower,
        upper: slab.upper,
        select_count,
        estimate_count: inside.len(),
    })
}

pub fn worst_slice_coverage(x: &[f64], d: usize, covered: &[bool], cfg: &WscConfig) -> Result<f64> {
    worst_slice(x, d, covered, cfg).map(|r| r.wsc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian_features(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n * d).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn all_covered_is_one() {
        let x = gaussian_features(200, 3, 1);
        let cfg = WscConfig {
            directions: 50,
            ..Default::default()
        };
        assert_eq!(worst_slice_coverage(&x, 3, &[true; 200], &cfg).unwrap(), 1.0);
    }

    #[test]
    fn flag_feature_isolates_misses() {
        let n = 1000;
        let mut r = rng::seeded(4);
        let covered: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.6).collect();
        let x: Vec<f64> = covered.iter().map(|&c| c as u8 as f64).collect();
        let cfg = WscConfig {
            directions: 20,
            ..Default::default()
        };
        assert!(worst_slice_coverage(&x, 1, &covered, &cfg).unwrap() <= 0.05);
    }

    #[test]
    fn independent_flags_stay_near_marginal() {
        let n = 2000;
        let x = gaussian_features(n, 4, 9);
        let mut hits = 0;
        for seed in 0..20 {
            let mut r = rng::derive(seed, 77);
            let covered: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.9).collect();
            let cfg = WscConfig {
                directions: 100,
                seed,
                ..Default::default()
            };
            hits += (worst_slice_coverage(&x, 4, &covered, &cfg).unwrap() >= 0.8) as usize;
        }
        assert!(hits >= 19, "{hits} of 20");
    }

    #[test]
    fn deterministic_and_validated() {
        let x = gaussian_features(100, 2, 3);
        let covered: Vec<bool> = (0..100).map(|i| i % 4 != 0).collect();
        let cfg = WscConfig {
            directions: 30,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(worst_slice(&x, 2, &covered, &cfg).unwrap(), worst_slice(&x, 2, &covered, &cfg).unwrap());
        assert!(worst_slice(&x, 2, &covered[..1], &cfg).is_err());
        let bad = WscConfig { delta: 1.0, ..cfg };
        assert!(worst_slice(&x, 2, &covered, &bad).is_err());
    }
}
