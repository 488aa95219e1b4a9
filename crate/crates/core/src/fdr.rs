//! Benjamini-Hochberg q-values.

use crate::error::{invalid, Result};

/// BH step-up q-values, returned in input order.
pub fn bh_qvalues(p: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() {
        return invalid("cannot adjust an empty p-value list");
    }
    if let Some(&bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return invalid(format!("p-value {bad} outside [0, 1]"));
    }
    let n = p.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));

    let mut q = vec![0.0; n];
    let mut running = 1.0f64;
    for rank in (0..n).rev() {
        let i = idx[rank];
        // Factor first: it is >= 1, so rounding can never push q below p.
        let candidate = p[i] * (n as f64 / (rank + 1) as f64);
        running = running.min(candidate);
        q[i] = running;
    }
    Ok(q)
}
