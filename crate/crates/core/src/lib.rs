//! Tempered belief-propagation models for mixture inference.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bp;
pub mod cmaes;
pub mod encoder;
pub mod error;
pub mod fitness;
pub mod graph;
pub mod mean_field;
pub mod mixture;
pub mod par;
pub mod testbed;

pub use error::{Error, Result};
