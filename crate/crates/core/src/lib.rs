//! Critical constants, exact oracles and Monte Carlo for branching random
//! walks killed below a linear barrier.

// negated comparisons are how NaN inputs get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod analysis;
pub mod error;
pub mod models;
pub mod mogulskii;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod spine;
pub mod stats;
pub mod transform;

pub use error::{Error, Result};
