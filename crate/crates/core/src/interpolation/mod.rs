//! Conversion of AW statistics to meta p-values through the statistic library.
//!
//! For each K the library knots `(ln s_kt, ln c_t)` are joined by a monotone
//! cubic. Statistics above the largest knot map to 1; below the smallest
//! knot the curve continues linearly in log-log space.

mod library;
mod spline;

use std::collections::BTreeMap;

pub use library::{load_library, save_library, StatLibrary, LIBRARY_VERSION};
pub use spline::{fit_monotone_spline, SplineCurve};

use crate::error::{invalid, AwError, Result};

/// Per-K curves fitted once and reused for every lookup.
#[derive(Debug, Clone)]
pub struct LibraryInterpolator {
    k_min: usize,
    k_max: usize,
    curves: BTreeMap<usize, Curve>,
}

#[derive(Debug, Clone)]
struct Curve {
    spline: SplineCurve,
    /// Knot positions and the targets they map to, kept in linear scale so
    /// a knot hit returns the stored target bit for bit.
    ln_s: Vec<f64>,
    c: Vec<f64>,
}

impl Curve {
    fn new(lib: &StatLibrary, k: usize) -> Result<Self> {
        let knots = lib.knots(k)?;
        let spline = fit_monotone_spline(&knots)?;
        let ln_s = knots.iter().map(|p| p.0).collect();
        let n = lib.grid().len();
        let c = (0..n).rev().map(|t| lib.grid().c_values()[t]).collect();
        Ok(Self { spline, ln_s, c })
    }

    fn pvalue_from_ln(&self, ln_s: f64) -> f64 {
        if ln_s >= self.spline.x_max() {
            return 1.0;
        }
        if let Ok(i) = self.ln_s.binary_search_by(|v| v.total_cmp(&ln_s)) {
            return self.c[i];
        }
        self.spline.eval(ln_s).min(0.0).exp().max(f64::MIN_POSITIVE)
    }
}

impl LibraryInterpolator {
    pub fn new(lib: &StatLibrary) -> Result<Self> {
        let (k_min, k_max) = (lib.grid().k_min(), lib.grid().k_max());
        let mut curves = BTreeMap::new();
        for k in k_min..=k_max {
            curves.insert(k, Curve::new(lib, k)?);
        }
        Ok(Self {
            k_min,
            k_max,
            curves,
        })
    }

    pub fn k_range(&self) -> (usize, usize) {
        (self.k_min, self.k_max)
    }

    fn curve(&self, k: usize) -> Result<&Curve> {
        self.curves.get(&k).ok_or(AwError::KNotInLibrary {
            k,
            kmin: self.k_min,
            kmax: self.k_max,
        })
    }

    /// Meta p-value for a log statistic, never exactly zero. Accepts log
    /// statistics far below the smallest representable p-value.
    pub fn pvalue_from_ln(&self, k: usize, ln_s: f64) -> Result<f64> {
        let curve = self.curve(k)?;
        if ln_s.is_nan() || ln_s > 0.0 {
            return invalid(format!("log statistic must be <= 0, got {ln_s}"));
        }
        Ok(curve.pvalue_from_ln(ln_s))
    }

    pub fn pvalue(&self, k: usize, s_obs: f64) -> Result<f64> {
        if !(s_obs > 0.0 && s_obs <= 1.0) {
            return invalid(format!("statistic must lie in (0, 1], got {s_obs}"));
        }
        self.pvalue_from_ln(k, s_obs.ln())
    }
}

/// One-off lookup; prefer [`LibraryInterpolator`] for many queries.
pub fn interp_pvalue(lib: &StatLibrary, k: usize, s_obs: f64) -> Result<f64> {
    if !lib.contains_k(k) {
        return Err(AwError::KNotInLibrary {
            k,
            kmin: lib.grid().k_min(),
            kmax: lib.grid().k_max(),
        });
    }
    if !(s_obs > 0.0 && s_obs <= 1.0) {
        return invalid(format!("statistic must lie in (0, 1], got {s_obs}"));
    }
    Ok(Curve::new(lib, k)?.pvalue_from_ln(s_obs.ln()))
}
