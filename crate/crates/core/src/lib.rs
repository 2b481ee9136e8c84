// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cad;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hoctree;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod refine;
pub mod render;
pub mod scene;
pub mod search;
pub mod synth;

pub use error::{Error, Result};
