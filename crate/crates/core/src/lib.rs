//! Generative query recommendation lab.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod cor;
pub mod ctr;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod text;
pub mod world;

pub use error::{Error, Result};
