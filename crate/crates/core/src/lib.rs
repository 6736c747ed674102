//! Coupled-coil extraction, device models and transient simulation for a
//! PCB-transformer digital isolator.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod devices;
pub mod engine;
pub mod error;
pub mod halfbridge;
pub mod link;
pub mod magnetics;
pub mod par;
pub mod topologies;

pub use error::{Error, Result};
