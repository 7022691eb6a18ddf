//! Forward-backward envelope solvers for `minimize f(x) + g(x)`.
// Parameter checks are written as `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counters;
pub mod directions;
pub mod error;
pub mod fbe;
pub mod io;
pub mod linops;
pub mod oracle;
pub mod problems;
pub mod prox;
pub mod smooth;
pub mod solver;
pub mod vecops;

pub use counters::Counters;
pub use error::{Error, Result};
