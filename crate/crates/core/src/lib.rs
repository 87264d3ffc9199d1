//! Privacy-enhanced numeric views of clinical-style time series.
//!
//! Columns are transformed by geometric operators that preserve the column
//! mean and variance exactly while bounding pointwise displacement in
//! z-space, and each release is scored by a reconstruction, linkage,
//! membership and attribute attack harness plus fidelity metrics.

// NaN must fail range checks, so negated comparisons are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod error;
pub mod manifold;
pub mod metrics;
pub mod operators;
pub mod pipeline;
pub mod rng;
pub mod skills;
pub mod synth;

pub use error::{Error, Result};
