//! Early-life lifetime prediction for Li-ion cells from reference performance
//! test (RPT) curves.
//!
//! The pipeline runs ingest → curves → features → selection → regression /
//! hierarchical model → evaluation. Each stage is a plain function over the
//! types in [`types`]; [`pipeline`] chains them with on-disk caching.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod config;
pub mod curves;
pub mod cv;
pub mod error;
pub mod eval;
pub mod features;
pub mod hbm;
pub mod ingest;
pub mod names;
pub mod pipeline;
pub mod regress;
pub mod report;
pub mod selection;
pub mod spline;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
