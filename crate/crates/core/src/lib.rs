//! Probabilistic vectorized HD maps and the evaluation stack around them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod io;
pub mod map;
pub mod map_eval;
pub mod pipeline;
pub mod pred_eval;
pub mod probmap;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
