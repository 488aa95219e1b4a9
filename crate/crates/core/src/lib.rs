//! Adaptively weighted Fisher (AW-Fisher) meta-analysis.
//!
//! The crate covers the whole path from per-study p-values to biomarker
//! categories:
//!
//! * [`aw`]: the AW statistic and its optimal weights,
//! * [`oracle`]: exact and Monte Carlo null p-values used as references,
//! * [`sampling`]: importance sampling and the statistic library build,
//! * [`interpolation`]: library persistence and statistic-to-p-value lookup,
//! * [`resample`]: stratified bootstrap, variability index, co-membership,
//! * [`categorize`]: tight clustering of co-membership into modules,
//! * [`simulate`]: synthetic data generators and the permutation baseline.

// Negated float comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aw;
pub mod categorize;
pub mod chi2;
pub mod diagnostics;
pub mod error;
pub mod fdr;
pub mod interpolation;
pub mod oracle;
pub mod resample;
pub mod rng;
pub mod sampling;
pub mod simulate;

pub use error::{AwError, Result};
