//! Chi-square tail probabilities for even degrees of freedom.
//!
//! With `df = 2m` and `h = x / 2` the survival function is the Poisson sum
//! `Q(m, h) = exp(-h) * sum_{j < m} h^j / j!`, so everything here works with
//! the half-statistic `h` and the study count `m` directly.

use statrs::function::factorial::ln_factorial;

use crate::error::{invalid, AwError, Result};

/// `ln Q(m, h)`, the log upper tail of a chi-square with `2m` degrees of
/// freedom at `2h`. Requires `m >= 1` and `h >= 0`.
pub fn ln_sf_half(m: usize, h: f64) -> f64 {
    debug_assert!(m >= 1);
    if h <= 0.0 {
        return 0.0;
    }
    if m == 1 {
        return -h;
    }
    if h < (m - 1) as f64 {
        // The upper tail is the larger part: take ln(1 - P) from the lower
        // tail series, which avoids cancellation in -h + ln(sum) near Q = 1.
        let mut term = (m as f64 * h.ln() - h - ln_factorial(m as u64)).exp();
        let mut lower = term;
        for j in m + 1.. {
            term *= h / j as f64;
            lower += term;
            if term <= lower * 1e-17 {
                break;
            }
        }
        return (-lower).ln_1p();
    }
    // Here h >= m - 1, so the largest term is j = m - 1; walk down until the
    // remaining terms cannot change the sum. Deep tails stop after a few terms.
    let peak = m - 1;
    let ln_peak = peak as f64 * h.ln() - ln_factorial(peak as u64);
    let mut rel = 1.0;
    let mut t = 1.0;
    for j in (1..=peak).rev() {
        t *= j as f64 / h;
        rel += t;
        if t < rel * 1e-17 {
            break;
        }
    }
    -h + ln_peak + rel.ln()
}

/// Derivative of [`ln_sf_half`] with respect to `h`.
fn d_ln_sf_half(m: usize, h: f64, ln_q: f64) -> f64 {
    if h <= 0.0 {
        return if m == 1 { -1.0 } else { 0.0 };
    }
    let ln_density = (m - 1) as f64 * h.ln() - ln_factorial((m - 1) as u64) - h;
    -(ln_density - ln_q).exp()
}

fn check_df(df: usize) -> Result<usize> {
    if df == 0 || df % 2 != 0 {
        return invalid(format!(
            "degrees of freedom must be a positive even integer, got {df}"
        ));
    }
    Ok(df / 2)
}

/// Upper tail `P(X >= x)` for `X ~ chi-square(df)`, `df` even.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    Ok(chi2_ln_sf(x, df)?.exp())
}

pub fn chi2_ln_sf(x: f64, df: usize) -> Result<f64> {
    let m = check_df(df)?;
    if !(x >= 0.0) || x.is_infinite() {
        return invalid(format!(
            "chi-square statistic must be finite and >= 0, got {x}"
        ));
    }
    Ok(ln_sf_half(m, x / 2.0))
}

/// Solves `ln Q(m, h) = ln_level` for `h >= 0`, where `ln_level <= 0`.
///
/// `ln Q` is concave and decreasing in `h`, so Newton iterates started to the
/// right of the root decrease monotonically onto it; a bisection bracket
/// guards against rounding.
pub fn isf_half(m: usize, ln_level: f64) -> Result<f64> {
    if m == 0 || !(ln_level <= 0.0) || ln_level == f64::NEG_INFINITY {
        return invalid(format!(
            "isf_half needs m >= 1 and a finite log level <= 0 (m={m}, ln={ln_level})"
        ));
    }
    if ln_level == 0.0 {
        return Ok(0.0);
    }
    if m == 1 {
        return Ok(-ln_level);
    }
    let mut lo = 0.0;
    let mut hi = (m as f64).max(-ln_level);
    while ln_sf_half(m, hi) > ln_level {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(AwError::Numeric(format!(
                "isf_half: no upper bracket for ln level {ln_level}"
            )));
        }
    }
    let mut h = hi;
    for _ in 0..200 {
        let lq = ln_sf_half(m, h);
        let f = lq - ln_level;
        if f == 0.0 {
            return Ok(h);
        }
        if f > 0.0 {
            lo = lo.max(h);
        } else {
            hi = hi.min(h);
        }
        let d = d_ln_sf_half(m, h, lq);
        let mut next = h - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - h).abs() <= 1e-15 * h.max(1.0) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        h = next;
    }
    Ok(h)
}

/// Inverse survival function: the `x` with `chi2_sf(x, df) = level`.
pub fn chi2_isf(level: f64, df: usize) -> Result<f64> {
    let m = check_df(df)?;
    if !(level > 0.0 && level <= 1.0) {
        return invalid(format!("level must lie in (0, 1], got {level}"));
    }
    Ok(2.0 * isf_half(m, level.ln())?)
}
