//! Goodness-of-fit and agreement measures used to validate the pipeline.

use std::collections::HashMap;

use crate::error::{invalid, Result};

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1).
/// Returns `(D, p)` with the asymptotic Kolmogorov p-value (Stephens'
/// small-sample correction).
pub fn ks_uniform(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return invalid("KS test needs at least one sample");
    }
    let mut x = samples.to_vec();
    if x.iter().any(|v| v.is_nan()) {
        return invalid("KS test input contains NaN");
    }
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - v).max(v - i as f64 / n);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: std::hash::Hash + Eq,
    B: std::hash::Hash + Eq,
{
    if a.len() != b.len() {
        return invalid("labelings differ in length");
    }
    let n = a.len();
    if n < 2 {
        return invalid("ARI needs at least two items");
    }
    let mut ra: HashMap<&A, usize> = HashMap::new();
    let mut rb: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        let la = ra.len();
        let ia = *ra.entry(x).or_insert(la);
        let lb = rb.len();
        let ib = *rb.entry(y).or_insert(lb);
        *joint.entry((ia, ib)).or_default() += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let mut row = vec![0u64; ra.len()];
    let mut col = vec![0u64; rb.len()];
    let mut index = 0.0;
    for (&(i, j), &m) in &joint {
        row[i] += m;
        col[j] += m;
        index += c2(m);
    }
    let sa: f64 = row.iter().map(|&m| c2(m)).sum();
    let sb: f64 = col.iter().map(|&m| c2(m)).sum();
    let total = c2(n as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("slope needs two or more paired points");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_reference_points() {
        // Classical critical values: P(K > 1.3581) = 0.05, P(K > 1.6276) = 0.01.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 2e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_on_grid_is_uniform() {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_uniform(&x).unwrap();
        assert!(d <= 0.0005 + 1e-12);
        assert!(p > 0.99);
        let skew: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(ks_uniform(&skew).unwrap().1 < 1e-6);
    }

    #[test]
    fn ari_known_values() {
        assert_eq!(
            adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 7, 7]).unwrap(),
            1.0
        );
        // Hand-computed: index 1, expected 1, max 2.5, so the ARI is 0.
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        assert!((v - 0.0).abs() < 1e-12, "{v}");
    }
}
