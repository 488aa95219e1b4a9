//! Exact and reference null p-values for the AW statistic.
//!
//! Under the global null the p-values are i.i.d. uniform. The AW statistic
//! satisfies `S <= s` exactly when, for some j, the product of the j smallest
//! p-values falls below `t_j = exp(-isf_j(s) / 2)`. That gives a closed form
//! for K = 2, a one-dimensional integral for K = 3, and a Monte Carlo
//! reference for any K.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::aw::PrefixSearch;
use crate::chi2::isf_half;
use crate::error::{invalid, AwError, Result};
use crate::rng::uniform_open0;
use crate::sampling::{chunk_count, chunk_len, chunk_rng, TailEstimate};

pub use crate::chi2::chi2_isf;

/// Product thresholds `t_1 >= t_2 >= ... >= t_K` for an observed statistic,
/// stored as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    ln_t: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(s_obs: f64, k: usize) -> Result<Self> {
        check_level(s_obs)?;
        if k < 1 {
            return invalid("threshold vector needs K >= 1");
        }
        let ln_s = s_obs.ln();
        let mut ln_t = Vec::with_capacity(k);
        ln_t.push(ln_s);
        for j in 2..=k {
            ln_t.push(-isf_half(j, ln_s)?);
        }
        Ok(Self { ln_t })
    }

    pub fn ln_values(&self) -> &[f64] {
        &self.ln_t
    }

    pub fn values(&self) -> Vec<f64> {
        self.ln_t.iter().map(|x| x.exp()).collect()
    }
}

fn check_level(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return invalid(format!("observed statistic must lie in (0, 1], got {s}"));
    }
    Ok(())
}

/// The two branches of the K = 2 formula, in log-threshold form.
/// Returns the square-region branch and the hyperbola branch.
pub fn k2_branches(ln_t1: f64, ln_t2: f64) -> (f64, f64) {
    let t1 = ln_t1.exp();
    let t2 = ln_t2.exp();
    let square = 2.0 * t1 - t1 * t1;
    let hyperbola = t2 * (ln_t2 - 2.0 * ln_t1) + 2.0 * t1 - t2;
    (square, hyperbola)
}

/// Exact null p-value of the AW statistic for two studies.
pub fn pvalue_exact_k2(s_obs: f64) -> Result<f64> {
    let th = ThresholdVector::new(s_obs, 2)?;
    let (ln_t1, ln_t2) = (th.ln_t[0], th.ln_t[1]);
    let (square, hyperbola) = k2_branches(ln_t1, ln_t2);
    Ok(if 2.0 * ln_t1 >= ln_t2 {
        square
    } else {
        hyperbola
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64)] {
    const N: usize = 8;
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut rule = Vec::with_capacity(N);
        for i in 0..N {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for n in 2..=N {
                    let nf = n as f64;
                    let p2 = ((2.0 * nf - 1.0) * x * p1 - (nf - 1.0) * p0) / nf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        rule
    })
}

/// Probability mass, given the smallest p-value `p1 >= t1`, that the middle
/// and largest p-values violate the remaining thresholds. Closed form in the
/// two inner variables; see the module docs for the event being measured.
fn k3_inner(p1: f64, t2: f64, t3: f64) -> f64 {
    let a = (t2 / p1).clamp(p1, 1.0);
    let r = t3 / p1;
    // p2 in [p1, a): the pair product already falls below t2.
    let mut f = 0.5 * (a - p1) * (2.0 - p1 - a);
    if r >= 1.0 {
        f += 0.5 * (1.0 - a) * (1.0 - a);
        return f;
    }
    if a < r {
        f += 0.5 * (r - a) * (2.0 - a - r);
    }
    let lo = a.max(r);
    let hi = a.max(r.sqrt());
    if hi > lo {
        f += r * (hi / lo).ln() - 0.5 * (hi - lo) * (hi + lo);
    }
    f
}

fn k3_integral(t: [f64; 3], panels: usize) -> f64 {
    let [t1, t2, t3] = t;
    let mut cuts: Vec<f64> = vec![
        t1,
        t2,
        t2.sqrt(),
        t3,
        t3.sqrt(),
        t3.cbrt(),
        t2 * t2 / t3,
        1.0,
    ]
    .into_iter()
    .filter(|&c| c >= t1 && c <= 1.0 && c.is_finite())
    .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let rule = gauss_legendre();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (u0, u1) = (w[0].ln(), w[1].ln());
        if !(u1 > u0) {
            continue;
        }
        let step = (u1 - u0) / panels as f64;
        for j in 0..panels {
            let mid = u0 + (j as f64 + 0.5) * step;
            let half = 0.5 * step;
            for &(x, wt) in rule {
                let p1 = (mid + half * x).exp();
                total += wt * half * p1 * k3_inner(p1, t2, t3);
            }
        }
    }
    total
}

/// Null p-value for three studies by adaptive quadrature. `grid_n` is the
/// starting number of panels per smooth piece (at least 64); it is doubled
/// until the result moves by less than 1e-6 absolute and 1e-3 relative.
pub fn pvalue_numeric_k3(s_obs: f64, grid_n: usize) -> Result<f64> {
    if grid_n < 64 {
        return invalid(format!("grid_n must be at least 64, got {grid_n}"));
    }
    let th = ThresholdVector::new(s_obs, 3)?.values();
    let t = [th[0], th[1], th[2]];
    // 1 - (1 - t1)^3 without cancellation for small t1.
    let head = -(3.0 * (-t[0]).ln_1p()).exp_m1();
    let mut panels = grid_n;
    let mut prev = head + 6.0 * k3_integral(t, panels);
    let mut delta = f64::NAN;
    for _ in 0..12 {
        panels *= 2;
        let next = head + 6.0 * k3_integral(t, panels);
        delta = (next - prev).abs();
        if delta < 1e-6 && delta <= 1e-3 * next {
            return Ok(next.min(1.0));
        }
        prev = next;
    }
    Err(AwError::NonConvergence { delta, panels })
}

/// Plain Monte Carlo estimate of `P(S <= s_obs)` with uniform p-values.
pub fn pvalue_montecarlo(
    s_obs: f64,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<TailEstimate> {
    check_level(s_obs)?;
    if k < 2 {
        return invalid("Monte Carlo reference needs K >= 2");
    }
    if n_samples < 1000 {
        return invalid(format!("need at least 1000 samples, got {n_samples}"));
    }
    let ln_s = s_obs.ln();
    let hits: u64 = (0..chunk_count(n_samples))
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut search = PrefixSearch::new();
            let mut e = vec![0.0; k];
            let mut hits = 0u64;
            for _ in 0..chunk_len(n_samples, c) {
                for x in e.iter_mut() {
                    *x = -uniform_open0(&mut rng).ln();
                }
                if search.run(&e).0 <= ln_s {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let n = n_samples as f64;
    let p = hits as f64 / n;
    Ok(TailEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k2_worked_value() {
        // t1 = 0.01, t2 solves e^{-h}(1 + h) = 0.01 at h = 6.638352,
        // hyperbola branch: 0.02206.
        let p = pvalue_exact_k2(0.01).unwrap();
        assert!((p - 0.022_06).abs() < 5e-5, "{p}");
    }

    #[test]
    fn k2_endpoints() {
        assert!((pvalue_exact_k2(1.0).unwrap() - 1.0).abs() < 1e-15);
        let tiny = pvalue_exact_k2(1e-12).unwrap();
        assert!(tiny > 2e-12 && tiny < 1e-10, "{tiny}");
    }

    #[test]
    fn k3_inner_full_region() {
        // With no thresholds binding beyond t1 nothing else is violated.
        assert!(k3_inner(0.5, 1e-9, 1e-12).abs() < 1e-15);
    }

    #[test]
    fn k3_endpoints_and_monotone() {
        assert!((pvalue_numeric_k3(1.0, 64).unwrap() - 1.0).abs() < 1e-9);
        let mut last = 0.0;
        for &s in &[1e-8, 1e-5, 1e-3, 0.01, 0.1, 0.5, 0.9] {
            let p = pvalue_numeric_k3(s, 64).unwrap();
            assert!(p > last && p <= 1.0 && p >= s, "s={s} p={p}");
            last = p;
        }
    }

    #[test]
    fn thresholds_decrease() {
        let t = ThresholdVector::new(0.01, 6).unwrap();
        for w in t.ln_values().windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let r = gauss_legendre();
        let s: f64 = r.iter().map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }
}
