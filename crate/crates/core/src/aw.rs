//! Adaptively weighted Fisher statistic.
//!
//! For binary weights `w`, the weighted Fisher sum `T(w) = -2 sum w_k ln p_k`
//! is referred to a chi-square with `2 sum w_k` degrees of freedom. The AW
//! statistic is the smallest such tail probability over all non-zero `w`.
//! For a fixed number of included studies the best choice is always the
//! smallest p-values, so only the K sorted prefixes need to be examined.
//!
//! Everything internally works on `e_k = -ln p_k`, which stays finite where
//! the p-values themselves would underflow.

use std::fmt;

use statrs::function::factorial::ln_factorial;

use crate::chi2::ln_sf_half;
use crate::error::{invalid, AwError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector(Vec<f64>);

impl PValueVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return invalid(format!("need at least 2 studies, got {}", values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(AwError::PValueOutOfRange { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WeightVector(Vec<bool>);

impl WeightVector {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return invalid("weight vector must include at least one study");
        }
        Ok(Self(bits))
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Weights carrying the direction of effect: +1, -1, or 0 for excluded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignedWeightVector(Vec<i8>);

impl SignedWeightVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.iter().any(|v| !(-1..=1).contains(v)) {
            return invalid("signed weights must be -1, 0 or 1");
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for SignedWeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &v in &self.0 {
            f.write_str(match v {
                1 => "+",
                -1 => "-",
                _ => "0",
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectSizeVector(Vec<f64>);

impl EffectSizeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("effect sizes must be finite");
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwResult {
    /// Minimal weighted Fisher tail probability, in (0, 1].
    pub statistic: f64,
    /// Natural log of `statistic`; finite even when `statistic` underflows.
    pub log_statistic: f64,
    pub weights: WeightVector,
    pub signed_weights: Option<SignedWeightVector>,
    pub meta_p: Option<f64>,
}

impl AwResult {
    fn from_parts(log_statistic: f64, bits: Vec<bool>) -> Self {
        AwResult {
            statistic: log_statistic.exp(),
            log_statistic,
            weights: WeightVector(bits),
            signed_weights: None,
            meta_p: None,
        }
    }
}

/// Weighted Fisher sum `-2 sum w_k ln p_k`.
pub fn fisher_stat(p: &[f64], w: &WeightVector) -> Result<f64> {
    if p.len() != w.len() {
        return Err(AwError::DimensionMismatch {
            expected: w.len(),
            got: p.len(),
        });
    }
    let mut t = 0.0;
    for (k, (&pk, &wk)) in p.iter().zip(w.as_slice()).enumerate() {
        if !wk {
            continue;
        }
        if !(pk > 0.0 && pk <= 1.0) {
            return Err(AwError::PValueOutOfRange {
                index: k,
                value: pk,
            });
        }
        t -= 2.0 * pk.ln();
    }
    Ok(t)
}

/// Reusable buffers for the prefix search so hot loops do not allocate.
#[derive(Debug, Default, Clone)]
pub struct PrefixSearch {
    keys: Vec<(u64, usize)>,
    order: Vec<usize>,
    prefix: Vec<f64>,
    lower: Vec<f64>,
    ln_fact: Vec<f64>,
}

impl PrefixSearch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Study indices by decreasing `e` (increasing p), ties by index, as left
    /// by the last call to [`PrefixSearch::run`].
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    fn sort(&mut self, e: &[f64]) {
        // For non-negative floats the bit pattern orders like the value, so
        // plain integer keys sort by decreasing e with ties by index. Adding
        // 0.0 maps -0.0 (from p = 1) to +0.0.
        self.keys.clear();
        self.keys.extend(
            e.iter()
                .enumerate()
                .map(|(i, x)| (u64::MAX - (x + 0.0).to_bits(), i)),
        );
        self.keys.sort_unstable();
        self.order.clear();
        self.order.extend(self.keys.iter().map(|&(_, i)| i));
    }

    /// Returns `(ln L, k0)`: the log AW statistic and the number of included
    /// studies. `e` holds `-ln p_k` and must be finite and non-negative.
    ///
    /// Every prefix first gets cheap bounds on its log tail; only prefixes
    /// whose lower bound can reach the smallest upper bound are scored
    /// exactly, so the result matches [`PrefixSearch::run_exact`].
    pub fn run(&mut self, e: &[f64]) -> (f64, usize) {
        self.sort(e);
        let k = e.len();
        self.grow_ln_fact(k);
        self.prefix.clear();
        self.lower.clear();
        let mut h = 0.0;
        let mut ceiling = f64::INFINITY;
        for (j, &i) in self.order.iter().enumerate() {
            h += e[i];
            self.prefix.push(h);
            let (lo, hi) = tail_bounds(j + 1, h, self.ln_fact[j]);
            self.lower.push(lo);
            ceiling = ceiling.min(hi);
        }
        let mut best = (f64::INFINITY, 0);
        for j in 0..k {
            if self.lower[j] > ceiling {
                continue;
            }
            let l = ln_sf_half(j + 1, self.prefix[j]);
            if l < best.0 {
                best = (l, j + 1);
            }
        }
        best
    }

    fn grow_ln_fact(&mut self, k: usize) {
        while self.ln_fact.len() < k {
            let n = self.ln_fact.len() as u64;
            self.ln_fact.push(ln_factorial(n));
        }
    }

    /// Scores every prefix exactly; reference for the pruned search.
    pub fn run_exact(&mut self, e: &[f64]) -> (f64, usize) {
        self.sort(e);
        let mut best = (f64::INFINITY, 0);
        let mut h = 0.0;
        for (j, &i) in self.order.iter().enumerate() {
            h += e[i];
            let l = ln_sf_half(j + 1, h);
            if l < best.0 {
                best = (l, j + 1);
            }
        }
        best
    }

    fn weights(&self, k0: usize) -> Vec<bool> {
        let mut bits = vec![false; self.order.len()];
        for &i in &self.order[..k0] {
            bits[i] = true;
        }
        bits
    }
}

/// Bounds `(lower, upper)` on `ln Q(m, h)` from the largest Poisson term,
/// widened by a rounding allowance. `ln_fact_top` is `ln((m - 1)!)`.
fn tail_bounds(m: usize, h: f64, ln_fact_top: f64) -> (f64, f64) {
    if h <= 0.0 {
        return (0.0, 0.0);
    }
    if m == 1 {
        return (-h, -h);
    }
    let top = (m - 1) as f64;
    let ln_h = h.ln();
    let ln_t = top * ln_h - ln_fact_top - h;
    let slack = 1e-12 * (h + top * ln_h.abs() + ln_fact_top + 1.0);
    let (lo, hi) = if h > top {
        // Terms below the peak shrink at least geometrically by top / h.
        (ln_t, ln_t - (-top / h).ln_1p())
    } else {
        // Same argument on the lower tail, starting from the term j = m.
        let lower_tail = (ln_t + ln_h - (m as f64).ln()).exp() / (1.0 - h / (m + 1) as f64);
        let lo = if lower_tail < 1.0 {
            ln_t.max((-lower_tail).ln_1p())
        } else {
            ln_t
        };
        (lo, 0.0)
    };
    (lo - slack, hi + slack)
}

fn neg_logs(p: &PValueVector) -> Vec<f64> {
    p.as_slice().iter().map(|&x| -x.ln()).collect()
}

/// AW statistic by the sorted-prefix search, O(K log K).
///
/// Ties in L go to the fewest included studies; among equally small p-values
/// the lower study indices are included first.
pub fn aw_search_fast(p: &PValueVector) -> AwResult {
    let e = neg_logs(p);
    let mut search = PrefixSearch::new();
    let (l, k0) = search.run(&e);
    AwResult::from_parts(l, search.weights(k0))
}

/// Same as [`aw_search_fast`] on precomputed `-ln p` values.
pub fn aw_search_neglog(e: &[f64], search: &mut PrefixSearch) -> Result<AwResult> {
    if e.len() < 2 {
        return invalid(format!("need at least 2 studies, got {}", e.len()));
    }
    if let Some(i) = e.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(AwError::PValueOutOfRange {
            index: i,
            value: (-e[i]).exp(),
        });
    }
    let (l, k0) = search.run(e);
    Ok(AwResult::from_parts(l, search.weights(k0)))
}

pub const BRUTE_MAX_K: usize = 20;

/// AW statistic by enumerating all `2^K - 1` weight vectors. Reference
/// implementation for testing; K is limited to [`BRUTE_MAX_K`].
///
/// Selected terms are summed in the same sorted order as the prefix search,
/// so both paths produce bit-identical statistics. Ties in L are broken by
/// fewer included studies, then by the lexicographically smallest list of
/// included study indices.
pub fn aw_search_brute(p: &PValueVector) -> Result<AwResult> {
    let k = p.len();
    if k > BRUTE_MAX_K {
        return invalid(format!(
            "brute-force search is limited to K <= {BRUTE_MAX_K}, got {k}"
        ));
    }
    let e = neg_logs(p);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| e[b].total_cmp(&e[a]).then(a.cmp(&b)));

    let mut best: Option<(f64, u32, u32)> = None;
    for mask in 1u32..(1u32 << k) {
        let mut h = 0.0;
        for &i in &order {
            if mask >> i & 1 == 1 {
                h += e[i];
            }
        }
        let n = mask.count_ones();
        let l = ln_sf_half(n as usize, h);
        let better = match best {
            None => true,
            Some((bl, bn, bm)) => {
                l < bl || (l == bl && (n < bn || (n == bn && lex_less(mask, bm))))
            }
        };
        if better {
            best = Some((l, n, mask));
        }
    }
    let (l, _, mask) = best.expect("K >= 2 gives at least one mask");
    let bits = (0..k).map(|i| mask >> i & 1 == 1).collect();
    Ok(AwResult::from_parts(l, bits))
}

/// Lexicographic comparison of the ascending index lists of two masks with
/// equal popcount.
fn lex_less(a: u32, b: u32) -> bool {
    // The lowest differing bit decides: the list containing that index sorts first.
    let diff = a ^ b;
    diff != 0 && a & (diff & diff.wrapping_neg()) != 0
}

/// Combines weights with effect directions: `sign(theta_k) * w_k`.
pub fn signed_weights(w: &WeightVector, theta: &EffectSizeVector) -> Result<SignedWeightVector> {
    if w.len() != theta.as_slice().len() {
        return Err(AwError::DimensionMismatch {
            expected: w.len(),
            got: theta.as_slice().len(),
        });
    }
    let v = w
        .as_slice()
        .iter()
        .zip(theta.as_slice())
        .map(|(&wk, &t)| {
            if !wk || t == 0.0 {
                0
            } else if t > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    Ok(SignedWeightVector(v))
}
