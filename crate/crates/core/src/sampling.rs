//! Importance sampling of the AW null distribution.
//!
//! Proposal draws have i.i.d. Beta(η, 1) coordinates, generated as `u^(1/η)`
//! for uniform `u`; with η < 1 they concentrate near zero where the deep tail
//! lives. Each draw carries the likelihood ratio
//! `W = 1 / (η^K (prod p_k)^(η - 1))` back to the uniform null.
//!
//! Draws are produced in fixed-size chunks, each with its own stream, so
//! estimates never depend on how chunks are scheduled across threads.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aw::PrefixSearch;
use crate::error::{invalid, AwError, Result};
use crate::interpolation::StatLibrary;
use crate::rng::{derive_seed, stream_rng, uniform_open0, TAG_CALIBRATE, TAG_CELL, TAG_TAIL};

const CHUNK: usize = 1 << 14;
const CALIBRATION_DRAWS: usize = 1000;
/// Targets at or above this use the uniform null directly.
const TILT_THRESHOLD: f64 = 0.01;
const ETA_MIN: f64 = 1e-6;

pub(crate) fn chunk_count(n: usize) -> usize {
    n.div_ceil(CHUNK)
}

pub(crate) fn chunk_len(n: usize, c: usize) -> usize {
    CHUNK.min(n - c * CHUNK)
}

pub(crate) fn chunk_rng(seed: u64, c: usize) -> ChaCha8Rng {
    stream_rng(seed, &[TAG_TAIL, c as u64])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceConfig {
    pub eta: f64,
    pub k: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// `ln W` for a draw whose `-ln p` values sum to `sum_e`.
#[inline]
fn ln_weight(k: usize, eta: f64, sum_e: f64) -> f64 {
    -(k as f64) * eta.ln() - (1.0 - eta) * sum_e
}

/// Fills `e` with `-ln p` for one Beta(η, 1) draw and returns its sum.
#[inline]
fn draw(rng: &mut ChaCha8Rng, eta: f64, e: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for x in e.iter_mut() {
        *x = -uniform_open0(rng).ln() / eta;
        sum += *x;
    }
    sum
}

/// Importance-sampling estimate of `P(S <= s_obs)` under the uniform null.
pub fn is_tail_estimate(s_obs: f64, cfg: &ImportanceConfig) -> Result<TailEstimate> {
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        return invalid(format!("eta must be positive, got {}", cfg.eta));
    }
    if !(s_obs > 0.0 && s_obs <= 1.0) {
        return invalid(format!(
            "observed statistic must lie in (0, 1], got {s_obs}"
        ));
    }
    if cfg.k < 2 || cfg.n_samples == 0 {
        return invalid("importance sampling needs K >= 2 and at least one draw");
    }
    let ln_s = s_obs.ln();
    let parts: Vec<(f64, f64)> = (0..chunk_count(cfg.n_samples))
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(cfg.seed, c);
            let mut search = PrefixSearch::new();
            let mut e = vec![0.0; cfg.k];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..chunk_len(cfg.n_samples, c) {
                let sum_e = draw(&mut rng, cfg.eta, &mut e);
                if search.run(&e).0 <= ln_s {
                    let w = ln_weight(cfg.k, cfg.eta, sum_e).exp();
                    s1 += w;
                    s2 += w * w;
                }
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = cfg.n_samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    Ok(TailEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
    })
}

/// Mean importance weight over `n` proposal draws; should be 1.
pub fn mean_weight(k: usize, eta: f64, n: usize, seed: u64) -> TailEstimate {
    let mut rng = chunk_rng(seed, 0);
    let mut e = vec![0.0; k];
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let w = ln_weight(k, eta, draw(&mut rng, eta, &mut e)).exp();
        s1 += w;
        s2 += w * w;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    TailEstimate {
        estimate: mean,
        stderr: ((s2 / nf - mean * mean).max(0.0) / nf).sqrt(),
    }
}

/// Target p-values and the range of study counts a library covers.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    c_values: Vec<f64>,
    k_min: usize,
    k_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPreset {
    /// 1, 0.99, ..., 0.01, then 1e-3 down to 1e-100.
    Paper,
    /// 1, 0.99, ..., 0.01, then 1e-3 down to 1e-12.
    Desk,
}

impl TargetGrid {
    pub fn new(c_values: Vec<f64>, k_min: usize, k_max: usize) -> Result<Self> {
        if k_min < 2 || k_max < k_min {
            return invalid(format!("invalid K range {k_min}..={k_max}"));
        }
        if c_values.first() != Some(&1.0) {
            return invalid("target grid must start at 1");
        }
        for w in c_values.windows(2) {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return invalid(format!(
                    "target grid must be strictly decreasing and positive near {}",
                    w[1]
                ));
            }
        }
        Ok(Self {
            c_values,
            k_min,
            k_max,
        })
    }

    pub fn preset(preset: GridPreset, k_min: usize, k_max: usize) -> Result<Self> {
        let last_exp = match preset {
            GridPreset::Paper => 100,
            GridPreset::Desk => 12,
        };
        let mut c: Vec<f64> = (1..=100).rev().map(|i| i as f64 / 100.0).collect();
        for j in 3..=last_exp {
            c.push(format!("1e-{j}").parse().expect("literal parses"));
        }
        Self::new(c, k_min, k_max)
    }

    pub fn c_values(&self) -> &[f64] {
        &self.c_values
    }

    pub fn k_min(&self) -> usize {
        self.k_min
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.c_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LibraryCell {
    pub k: usize,
    pub t_index: usize,
    pub c_t: f64,
    /// Statistic threshold whose estimated null tail is at most `c_t`.
    pub s_kt: f64,
    pub eta: f64,
    pub n_samples: usize,
}

/// Fixed uniform draws used to score candidate proposal shapes.
struct CalibrationSet {
    k: usize,
    neg_ln_u: Vec<f64>,
}

impl CalibrationSet {
    fn new(k: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[TAG_CALIBRATE]);
        let neg_ln_u = (0..k * CALIBRATION_DRAWS)
            .map(|_| -uniform_open0(&mut rng).ln())
            .collect();
        Self { k, neg_ln_u }
    }

    /// `ln phi(eta)`: the weighted null mass below the lower median statistic
    /// of the transformed draws.
    fn ln_phi(&self, eta: f64) -> f64 {
        let k = self.k;
        let mut search = PrefixSearch::new();
        let mut e = vec![0.0; k];
        let mut stats = Vec::with_capacity(CALIBRATION_DRAWS);
        for row in self.neg_ln_u.chunks_exact(k) {
            let mut sum = 0.0;
            for (x, &v) in e.iter_mut().zip(row) {
                *x = v / eta;
                sum += *x;
            }
            stats.push((search.run(&e).0, ln_weight(k, eta, sum)));
        }
        let mut sorted: Vec<f64> = stats.iter().map(|s| s.0).collect();
        sorted.sort_by(f64::total_cmp);
        let r0 = sorted[CALIBRATION_DRAWS / 2 - 1];
        let lw: Vec<f64> = stats.iter().filter(|s| s.0 <= r0).map(|s| s.1).collect();
        log_sum_exp(&lw) - (CALIBRATION_DRAWS as f64).ln()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Proposal shape for target `c_t`: 1 for `c_t >= 0.01`, otherwise the root of
/// `phi(eta) = c_t` on fixed calibration draws, so that about half of the
/// proposal draws land beyond the target threshold.
pub fn calibrate_eta(k: usize, c_t: f64, seed: u64) -> Result<f64> {
    if !(c_t > 0.0 && c_t < 1.0) {
        return invalid(format!("calibration target must lie in (0, 1), got {c_t}"));
    }
    if k < 2 {
        return invalid("calibration needs K >= 2");
    }
    if c_t >= TILT_THRESHOLD {
        return Ok(1.0);
    }
    let set = CalibrationSet::new(k, seed);
    let target = c_t.ln();
    let fail = |reason: String| AwError::Calibration {
        k,
        target: c_t,
        reason,
    };

    // phi decreases as eta shrinks; walk down until it drops below the target.
    let mut hi = 1.0f64;
    let mut lo = 0.5f64;
    loop {
        if set.ln_phi(lo) <= target {
            break;
        }
        hi = lo;
        if lo <= ETA_MIN {
            return Err(fail(format!(
                "phi stays above target down to eta = {ETA_MIN:e}"
            )));
        }
        lo = (lo * 0.5).max(ETA_MIN);
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    while b - a > 1e-4 * 0.5 {
        let mid = 0.5 * (a + b);
        if set.ln_phi(mid.exp()) <= target {
            a = mid;
        } else {
            b = mid;
        }
    }
    let eta = (0.5 * (a + b)).exp();
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(fail(format!("root {eta} outside (0, 1]")));
    }
    Ok(eta)
}

/// Library cell with a given proposal shape.
pub fn build_cell_with_eta(
    k: usize,
    t_index: usize,
    c_t: f64,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LibraryCell> {
    let cell = |s_kt| LibraryCell {
        k,
        t_index,
        c_t,
        s_kt,
        eta,
        n_samples,
    };
    if c_t == 1.0 {
        return Ok(cell(1.0));
    }
    if !(c_t > 0.0 && c_t < 1.0) {
        return invalid(format!("target must lie in (0, 1], got {c_t}"));
    }
    if k < 2 || n_samples == 0 {
        return invalid("cell needs K >= 2 and at least one draw");
    }
    let draws = sorted_draws(k, eta, n_samples, seed);
    match threshold(&draws, n_samples, c_t) {
        Some(ln_s) => Ok(cell(ln_s.exp().min(1.0))),
        None => Err(AwError::CellFailed {
            k,
            t_index,
            reason: format!("smallest draw already carries tail mass above {c_t:e} (eta = {eta})"),
        }),
    }
}

/// `(ln S, ln W)` for `n` proposal draws, sorted by statistic.
fn sorted_draws(k: usize, eta: f64, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let chunks: Vec<Vec<(f64, f64)>> = (0..chunk_count(n))
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut search = PrefixSearch::new();
            let mut e = vec![0.0; k];
            (0..chunk_len(n, c))
                .map(|_| {
                    let sum = draw(&mut rng, eta, &mut e);
                    (search.run(&e).0, ln_weight(k, eta, sum))
                })
                .collect()
        })
        .collect();
    let mut draws: Vec<(f64, f64)> = chunks.into_iter().flatten().collect();
    draws.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    draws
}

/// Largest drawn log statistic whose weighted tail mass stays within `c_t`.
fn threshold(draws: &[(f64, f64)], n_samples: usize, c_t: f64) -> Option<f64> {
    // Tail mass relative to the target, so the running sum stays near 1.
    let scale = -(n_samples as f64).ln() - c_t.ln();
    let mut mass = 0.0f64;
    let mut comp = 0.0f64;
    let mut accepted: Option<f64> = None;
    let mut i = 0;
    while i < draws.len() {
        let stat = draws[i].0;
        let mut j = i;
        while j < draws.len() && draws[j].0 == stat {
            // Kahan summation keeps the tail accurate over 10^6+ terms.
            let y = (draws[j].1 + scale).exp() - comp;
            let t = mass + y;
            comp = (t - mass) - y;
            mass = t;
            j += 1;
        }
        if mass > 1.0 {
            break;
        }
        accepted = Some(stat);
        i = j;
    }
    accepted
}

/// Untilted cells of one K read their thresholds off a single shared draw
/// set, which makes them monotone in the target.
fn untilted_cells(
    k: usize,
    targets: &[(usize, f64)],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<LibraryCell>> {
    let draws = sorted_draws(k, 1.0, n_samples, seed);
    targets
        .iter()
        .map(|&(t_index, c_t)| {
            let ln_s = threshold(&draws, n_samples, c_t).ok_or_else(|| AwError::CellFailed {
                k,
                t_index,
                reason: format!("fewer than one in {n_samples} draws fall below target {c_t:e}"),
            })?;
            Ok(LibraryCell {
                k,
                t_index,
                c_t,
                s_kt: ln_s.exp().min(1.0),
                eta: 1.0,
                n_samples,
            })
        })
        .collect()
}

/// Calibrates the proposal and builds one library cell.
pub fn build_cell(k: usize, c_t: f64, n_samples: usize, seed: u64) -> Result<LibraryCell> {
    build_indexed_cell(k, 0, c_t, n_samples, seed)
}

fn build_indexed_cell(
    k: usize,
    t_index: usize,
    c_t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LibraryCell> {
    let eta = if c_t < 1.0 {
        calibrate_eta(k, c_t, derive_seed(seed, &[TAG_CALIBRATE]))?
    } else {
        1.0
    };
    build_cell_with_eta(
        k,
        t_index,
        c_t,
        eta,
        n_samples,
        derive_seed(seed, &[TAG_CELL]),
    )
}

/// Seed of cell `(k, t_index)` under a master seed.
pub fn cell_seed(master_seed: u64, k: usize, t_index: usize) -> u64 {
    derive_seed(master_seed, &[k as u64, t_index as u64])
}

/// Builds every cell of the grid. Tilted cells run independently in
/// parallel; failures are collected rather than stopping at the first one.
pub fn build_library(grid: &TargetGrid, n_samples: usize, master_seed: u64) -> Result<StatLibrary> {
    if n_samples < 1000 {
        return invalid(format!(
            "library cells need at least 1000 draws, got {n_samples}"
        ));
    }
    let mut results: Vec<Result<LibraryCell>> = Vec::new();
    let mut tilted: Vec<(usize, usize, f64)> = Vec::new();
    for k in grid.k_min()..=grid.k_max() {
        let mut untilted = Vec::new();
        for (t, &c) in grid.c_values().iter().enumerate() {
            if c == 1.0 {
                results.push(Ok(LibraryCell {
                    k,
                    t_index: t,
                    c_t: 1.0,
                    s_kt: 1.0,
                    eta: 1.0,
                    n_samples,
                }));
            } else if c >= TILT_THRESHOLD {
                untilted.push((t, c));
            } else {
                tilted.push((k, t, c));
            }
        }
        if !untilted.is_empty() {
            match untilted_cells(k, &untilted, n_samples, cell_seed(master_seed, k, 0)) {
                Ok(cells) => results.extend(cells.into_iter().map(Ok)),
                Err(e) => results.push(Err(e)),
            }
        }
    }
    results.extend(
        tilted
            .par_iter()
            .map(|&(k, t, c)| build_indexed_cell(k, t, c, n_samples, cell_seed(master_seed, k, t)))
            .collect::<Vec<_>>(),
    );
    let mut cells = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(cell) => cells.push(cell),
            Err(e) => failed.push(e.to_string()),
        }
    }
    if !failed.is_empty() {
        return Err(AwError::LibraryBuild(failed));
    }
    cells.sort_by_key(|c| (c.k, c.t_index));
    StatLibrary::new(grid.clone(), cells).map_err(|e| AwError::LibraryBuild(vec![e.to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{pvalue_exact_k2, pvalue_montecarlo};

    #[test]
    fn uniform_proposal_matches_plain_monte_carlo() {
        let cfg = ImportanceConfig {
            eta: 1.0,
            k: 3,
            n_samples: 40_000,
            seed: 11,
        };
        let is = is_tail_estimate(0.05, &cfg).unwrap();
        let mc = pvalue_montecarlo(0.05, 3, 40_000, 11).unwrap();
        assert_eq!(is.estimate, mc.estimate);
        assert!((is.stderr - mc.stderr).abs() < 1e-12);
    }

    #[test]
    fn s_obs_one_is_certain() {
        let cfg = ImportanceConfig {
            eta: 1.0,
            k: 2,
            n_samples: 2000,
            seed: 1,
        };
        let r = is_tail_estimate(1.0, &cfg).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.stderr, 0.0);
        assert!(is_tail_estimate(0.5, &ImportanceConfig { eta: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn weights_average_to_one() {
        for &eta in &[0.3, 0.1] {
            let m = mean_weight(3, eta, 200_000, 5);
            assert!(
                (m.estimate - 1.0).abs() < 3.0 * m.stderr + 1e-9,
                "eta={eta}: {m:?}"
            );
        }
    }

    #[test]
    fn tilted_estimate_matches_k2_formula() {
        let eta = calibrate_eta(2, 0.01, 3).unwrap();
        let cfg = ImportanceConfig {
            eta,
            k: 2,
            n_samples: 200_000,
            seed: 9,
        };
        let r = is_tail_estimate(0.004, &cfg).unwrap();
        let exact = pvalue_exact_k2(0.004).unwrap();
        assert!(
            (r.estimate - exact).abs() < 3.0 * r.stderr,
            "{r:?} vs {exact}"
        );
    }

    #[test]
    fn deep_tail_precision_needs_tilting() {
        let s = 1e-8 / 3.5;
        let eta = calibrate_eta(2, 1e-8, 4).unwrap();
        let tilted = is_tail_estimate(
            s,
            &ImportanceConfig {
                eta,
                k: 2,
                n_samples: 100_000,
                seed: 2,
            },
        )
        .unwrap();
        assert!(tilted.stderr / tilted.estimate < 0.05, "{tilted:?}");
        let exact = pvalue_exact_k2(s).unwrap();
        assert!((tilted.estimate - exact).abs() < 3.0 * tilted.stderr);
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_eta(5, 0.5, 1).unwrap(), 1.0);
        let set = CalibrationSet::new(4, 8);
        assert!((set.ln_phi(1.0) - 0.5f64.ln()).abs() < 1e-12);
        let a = calibrate_eta(2, 1e-6, 100).unwrap();
        let b = calibrate_eta(2, 1e-6, 200).unwrap();
        assert!(a > 0.0 && a < 1.0);
        assert!((a - b).abs() / a < 0.2, "{a} {b}");
    }

    #[test]
    fn phi_is_monotone_in_eta() {
        let set = CalibrationSet::new(3, 21);
        let mut last = f64::NEG_INFINITY;
        for i in 1..=40 {
            let eta = i as f64 / 40.0;
            let v = set.ln_phi(eta);
            assert!(v >= last - 1e-12, "eta={eta}");
            last = v;
        }
    }

    #[test]
    fn cell_threshold_matches_formula() {
        let cell = build_cell(2, 1e-4, 1_000_000, 17).unwrap();
        let p = pvalue_exact_k2(cell.s_kt).unwrap();
        assert!(p > 0.9e-4 && p < 1.1e-4, "{p}");
        assert_eq!(build_cell(3, 1.0, 5000, 1).unwrap().s_kt, 1.0);
    }

    #[test]
    fn small_library_passes_oracle_check() {
        let grid = TargetGrid::new(vec![1.0, 0.5, 0.01, 1e-3, 1e-4], 2, 2).unwrap();
        let lib = build_library(&grid, 100_000, 77).unwrap();
        assert_eq!(lib.cells().count(), 5);
        for cell in lib.cells() {
            let p = pvalue_exact_k2(cell.s_kt).unwrap();
            assert!(((p - cell.c_t) / cell.c_t).abs() < 0.15, "{cell:?}: {p}");
        }
    }

    #[test]
    fn grid_presets() {
        let desk = TargetGrid::preset(GridPreset::Desk, 2, 10).unwrap();
        assert_eq!(desk.len(), 110);
        let full = TargetGrid::preset(GridPreset::Paper, 2, 100).unwrap();
        assert_eq!(full.len(), 198);
        assert_eq!(full.c_values()[197], 1e-100);
        assert!(TargetGrid::new(vec![1.0, 0.5], 3, 2).is_err());
        assert!(TargetGrid::new(vec![0.9, 0.5], 2, 2).is_err());
        assert!(TargetGrid::new(vec![1.0, 0.5, 0.5], 2, 2).is_err());
    }
}
