//! Learning-based predictive control: actor-critic horizon fitting driven
//! by a regularized recursive-gain optimizer.

// `!(x > 0.0)` is used on purpose so NaN fails validation too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod ocp;
pub mod plants;
pub mod solver;

pub use error::{LpcError, Result};
