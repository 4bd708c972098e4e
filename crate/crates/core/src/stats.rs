//! Small statistical toolkit used by the evaluation code and the acceptance
//! checks.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n − 1`); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length samples of size ≥ 2"));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // Series below converges slowly here and the tail is 1 to f64 precision.
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS statistic for samples supported on the lattice `j/m`,
/// `j = 0..=m`, against a reference CDF given at those atoms.
///
/// Both CDFs are step functions jumping only at atoms, so the supremum is
/// attained at an atom.
pub fn ks_statistic_lattice(counts: &[usize], cdf_atoms: &[f64]) -> Result<f64> {
    let m = cdf_atoms.len().checked_sub(1).ok_or_else(|| Error::invalid("empty reference CDF"))?;
    if counts.is_empty() {
        return Err(Error::invalid("KS test needs at least one sample"));
    }
    let mut hist = vec![0usize; m + 1];
    for &c in counts {
        if c > m {
            return Err(Error::invalid(format!("sample atom {c} beyond lattice size {m}")));
        }
        hist[c] += 1;
    }
    let total = counts.len() as f64;
    let mut acc = 0usize;
    let mut d: f64 = 0.0;
    for j in 0..=m {
        acc += hist[j];
        d = d.max((acc as f64 / total - cdf_atoms[j]).abs());
    }
    Ok(d)
}

/// Asymptotic KS p-value with Stephens' finite-sample correction. For a
/// discrete reference distribution the test is conservative.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// `U` statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for the alternative "first sample tends smaller".
    pub p_less: f64,
}

/// Two-sample Mann–Whitney U with mid-ranks, tie-corrected variance and a
/// continuity correction. With zero variance (all values tied) `p = 0.5`.
pub fn mann_whitney_less(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("Mann–Whitney needs two non-empty samples"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("Mann–Whitney samples contain NaN"));
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_x += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    if !(var > 0.0) {
        return Ok(MannWhitney { u, z: 0.0, p_less: 0.5 });
    }
    let mu = n1 * n2 / 2.0;
    let diff = u - mu;
    let corrected = if diff > 0.0 { (diff - 0.5).max(0.0) } else { (diff + 0.5).min(0.0) };
    let z = corrected / var.sqrt();
    Ok(MannWhitney { u, z, p_less: normal_cdf(z) })
}

/// One-sided sign test: `P(X ≥ wins)` for `X ~ Binomial(trials, ½)`.
pub fn sign_test_pvalue(wins: usize, trials: usize) -> Result<f64> {
    if wins > trials {
        return Err(Error::invalid("wins exceed trials"));
    }
    if wins == 0 {
        return Ok(1.0);
    }
    let b = Binomial::new(0.5, trials as u64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(b.sf(wins as u64 - 1))
}
