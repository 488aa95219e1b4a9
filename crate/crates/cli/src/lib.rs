//! File formats and end-to-end pipelines behind the `awfisher` binary.

// Negated float comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod format;
pub mod pipeline;
pub mod tsv;

pub use error::{CliError, CliResult};

/// Statistic library built with the desk preset, shipped with the crate.
pub const DESK_LIBRARY: &str = include_str!("../../../data/awfisher_desk.awflib");
