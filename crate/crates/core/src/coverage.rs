//! Exact distribution of test-time coverage under random calibration/test
//! assignment.
//!
//! With `n` calibration and `m` test scores drawn as a simple random sample
//! from `N = n+m` distinct fixed scores, the threshold is the
//! `k₀ = ⌈(n+1)(1−α)⌉`-th smallest calibration score. Coverage is at most
//! `j/m` exactly when at least `k₀` calibration scores sit among the
//! `k₀ + j` smallest of all `N`, so
//!
//! ```text
//! P(Ĉover ≤ t) = P(X ≥ k₀),   X ~ Hypergeometric(N, n white, k₀ + ⌊mt⌋ draws)
//!             = 1 − Φ_HG(k₀ − 1; N, n, k₀ + ⌊mt⌋).
//! ```

use std::fmt::Write as _;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::scores::{check_alpha, conformal_rank};

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Hypergeometric law: `draws` balls taken without replacement from an urn of
/// `population` balls, `white` of which are white.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hypergeometric {
    population: u64,
    white: u64,
    draws: u64,
}

impl Hypergeometric {
    pub fn new(population: u64, white: u64, draws: u64) -> Result<Self> {
        if white > population || draws > population {
            return Err(Error::invalid(format!(
                "hypergeometric({population}, {white}, {draws}) is not a valid urn"
            )));
        }
        Ok(Self {
            population,
            white,
            draws,
        })
    }

    pub fn min_support(&self) -> u64 {
        self.draws.saturating_sub(self.population - self.white)
    }

    pub fn max_support(&self) -> u64 {
        self.white.min(self.draws)
    }

    /// `ln P(X = x)` through log-gamma; `-inf` outside the support.
    pub fn ln_pmf(&self, x: u64) -> f64 {
        if x < self.min_support() || x > self.max_support() {
            return f64::NEG_INFINITY;
        }
        ln_choose(self.white, x) + ln_choose(self.population - self.white, self.draws - x)
            - ln_choose(self.population, self.draws)
    }

    pub fn pmf(&self, x: u64) -> f64 {
        self.ln_pmf(x).exp()
    }

    /// `P(lo ≤ X ≤ hi)`, terms added smallest first.
    fn mass_between(&self, lo: u64, hi: u64) -> f64 {
        let lo = lo.max(self.min_support());
        let hi = hi.min(self.max_support());
        if lo > hi {
            return 0.0;
        }
        let mut terms: Vec<f64> = (lo..=hi).map(|x| self.pmf(x)).collect();
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        terms.iter().sum::<f64>().clamp(0.0, 1.0)
    }

    /// `Φ_HG(x) = P(X ≤ x)`.
    pub fn cdf(&self, x: u64) -> f64 {
        if x >= self.max_support() {
            return 1.0;
        }
        self.mass_between(0, x)
    }

    /// `P(X ≥ x)`, summed directly rather than as `1 − Φ` so small tails
    /// keep their relative precision.
    pub fn sf_inclusive(&self, x: u64) -> f64 {
        if x <= self.min_support() {
            return 1.0;
        }
        self.mass_between(x, self.max_support())
    }
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::invalid(format!(
            "calibration size n = {n} and test size m = {m} must both be positive"
        )));
    }
    Ok(())
}

/// `⌊m·t⌋` with products within 1e-9 of an integer snapped to it.
fn covered_count(m: usize, t: f64) -> usize {
    let x = m as f64 * t;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// `P(Ĉover ≤ t)` for `n` calibration and `m` test nodes at miscoverage `α`.
pub fn coverage_cdf(n: usize, m: usize, alpha: f64, t: f64) -> Result<f64> {
    check_sizes(n, m)?;
    check_alpha(alpha)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} must lie in [0, 1]")));
    }
    let j = covered_count(m, t);
    if j >= m {
        return Ok(1.0);
    }
    let k0 = conformal_rank(n, alpha);
    if k0 > n {
        // threshold is FULL: every test node is covered
        return Ok(0.0);
    }
    let urn = Hypergeometric::new((n + m) as u64, n as u64, (k0 + j) as u64)?;
    Ok(urn.sf_inclusive(k0 as u64))
}

/// `E[Ĉover] = k₀/(n+1)`, capped at one.
pub fn expected_coverage(n: usize, alpha: f64) -> f64 {
    (conformal_rank(n, alpha) as f64 / (n as f64 + 1.0)).min(1.0)
}

/// CDF of `Ĉover` on a grid of `t`, plus the probability mass of each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageDistribution {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub t: Vec<f64>,
    pub cdf: Vec<f64>,
    pub pdf_mass: Vec<f64>,
}

impl CoverageDistribution {
    /// `grid` points `t_i = i/grid`, `i = 1..=grid`. Bin `i` carries
    /// `P(t_{i−1} < Ĉover ≤ t_i)`; the first bin also holds `P(Ĉover = 0)`,
    /// so the masses add to one.
    pub fn on_grid(n: usize, m: usize, alpha: f64, grid: usize) -> Result<Self> {
        check_sizes(n, m)?;
        check_alpha(alpha)?;
        if grid == 0 {
            return Err(Error::invalid("grid must have at least one point"));
        }
        let t: Vec<f64> = (1..=grid).map(|i| i as f64 / grid as f64).collect();
        let cdf = t
            .iter()
            .map(|&ti| coverage_cdf(n, m, alpha, ti))
            .collect::<Result<Vec<_>>>()?;
        let pdf_mass = cdf
            .iter()
            .enumerate()
            .map(|(i, &c)| if i == 0 { c } else { c - cdf[i - 1] })
            .collect();
        Ok(Self {
            n,
            m,
            alpha,
            t,
            cdf,
            pdf_mass,
        })
    }

    /// CSV with header `t,cdf,pdf_mass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,cdf,pdf_mass\n");
        for ((t, c), p) in self.t.iter().zip(&self.cdf).zip(&self.pdf_mass) {
            writeln!(out, "{t},{c},{p}").unwrap();
        }
        out
    }
}

/// Exact CDF of `Ĉover` at every attainable value `j/m`, `j = 0..=m`.
pub fn coverage_cdf_atoms(n: usize, m: usize, alpha: f64) -> Result<Vec<f64>> {
    (0..=m)
        .map(|j| coverage_cdf(n, m, alpha, j as f64 / m as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Discrete, DiscreteCDF, Hypergeometric as StatrsHg};

    #[test]
    fn pmf_and_cdf_agree_with_statrs() {
        for &(pop, white, draws) in &[(20u64, 7u64, 9u64), (300, 100, 150), (160, 60, 70)] {
            let ours = Hypergeometric::new(pop, white, draws).unwrap();
            let theirs = StatrsHg::new(pop, white, draws).unwrap();
            let mut total = 0.0;
            for x in ours.min_support()..=ours.max_support() {
                let p = ours.pmf(x);
                total += p;
                assert!((p - theirs.pmf(x)).abs() < 1e-10, "pmf({x}) for {pop},{white},{draws}");
                assert!((ours.cdf(x) - theirs.cdf(x)).abs() < 1e-9);
            }
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_calibration_single_test() {
        // two equally likely assignments: coverage is 0 or 1
        for t in [0.01, 0.3, 0.5, 0.99] {
            assert!((coverage_cdf(1, 1, 0.5, t).unwrap() - 0.5).abs() < 1e-12);
        }
        assert_eq!(coverage_cdf(1, 1, 0.5, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn enumeration_oracle_small_cases() {
        // brute force over all calibration subsets of N distinct ranks
        fn brute(n: usize, m: usize, alpha: f64, t: f64) -> f64 {
            let total = n + m;
            let k0 = conformal_rank(n, alpha);
            let mut hits = 0u64;
            let mut count = 0u64;
            for mask in 0u32..(1 << total) {
                if mask.count_ones() as usize != n {
                    continue;
                }
                count += 1;
                let calib: Vec<usize> = (0..total).filter(|i| mask & (1 << i) != 0).collect();
                let covered = if k0 > n {
                    m
                } else {
                    let eta = calib[k0 - 1];
                    (0..total).filter(|i| mask & (1 << i) == 0 && *i <= eta).count()
                };
                if (covered as f64) / (m as f64) <= t + 1e-12 {
                    hits += 1;
                }
            }
            hits as f64 / count as f64
        }
        for &(n, m) in &[(3, 4), (5, 5), (8, 6), (2, 9)] {
            for &alpha in &[0.1, 0.25, 0.5] {
                for j in 0..=m {
                    let t = j as f64 / m as f64;
                    let got = coverage_cdf(n, m, alpha, t).unwrap();
                    assert!((got - brute(n, m, alpha, t)).abs() < 1e-12, "n={n} m={m} a={alpha} t={t}");
                }
                // off-atom points fall back to the atom below
                let t = 0.5 / m as f64 + 0.4;
                assert!((coverage_cdf(n, m, alpha, t).unwrap() - brute(n, m, alpha, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_threshold_means_full_coverage() {
        assert_eq!(coverage_cdf(3, 10, 0.05, 0.99).unwrap(), 0.0);
        assert_eq!(coverage_cdf(3, 10, 0.05, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn cdf_monotone_and_total() {
        let d = CoverageDistribution::on_grid(1000, 10_000, 0.05, 200).unwrap();
        assert_eq!(d.t.len(), 200);
        assert_eq!(*d.cdf.last().unwrap(), 1.0);
        assert!(d.cdf.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        assert!((d.pdf_mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(d.to_csv().starts_with("t,cdf,pdf_mass\n"));
        assert_eq!(d.to_csv().lines().count(), 201);
    }

    #[test]
    fn cdf_monotone_in_n_near_target() {
        // more calibration data concentrates coverage above 1−α
        let alpha = 0.1;
        let t = 0.88;
        let mut last = f64::INFINITY;
        for n in [100, 200, 400, 800, 1600] {
            let c = coverage_cdf(n, 1000, alpha, t).unwrap();
            assert!(c <= last + 1e-12, "n={n}: {c} > {last}");
            last = c;
        }
    }

    #[test]
    fn mean_of_atoms_matches_expectation() {
        let (n, m, alpha) = (50, 40, 0.1);
        let atoms = coverage_cdf_atoms(n, m, alpha).unwrap();
        let mean: f64 = (0..=m)
            .map(|j| {
                let p = if j == 0 { atoms[0] } else { atoms[j] - atoms[j - 1] };
                p * j as f64 / m as f64
            })
            .sum();
        assert!((mean - expected_coverage(n, alpha)).abs() < 1e-12);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(coverage_cdf(0, 5, 0.1, 0.5).is_err());
        assert!(coverage_cdf(5, 0, 0.1, 0.5).is_err());
        assert!(coverage_cdf(5, 5, 0.0, 0.5).is_err());
        assert!(coverage_cdf(5, 5, 0.1, 1.5).is_err());
    }
}
